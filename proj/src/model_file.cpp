#include "pauc/model_file.hpp"

#include "pauc/embeddings.hpp"
#include "pauc/errors.hpp"
#include "text_io.hpp"

namespace pauc {

const Eigen::MatrixXd& ModelFile::matrix(const std::string& name) const {
  for (const auto& [n, m] : matrices) {
    if (n == name) return m;
  }
  throw DataError("model '" + kind + "' has no matrix '" + name + "'");
}

double ModelFile::param(const std::string& name) const {
  for (const auto& [n, v] : params) {
    if (n == name) return v;
  }
  throw DataError("model '" + kind + "' has no parameter '" + name + "'");
}

double ModelFile::param_or(const std::string& name, double fallback) const {
  return has_param(name) ? param(name) : fallback;
}

bool ModelFile::has_param(const std::string& name) const {
  for (const auto& p : params) {
    if (p.first == name) return true;
  }
  return false;
}

void ModelFile::set_param(const std::string& name, double value) {
  for (auto& p : params) {
    if (p.first == name) {
      p.second = value;
      return;
    }
  }
  params.emplace_back(name, value);
}

void write_model_file(const ModelFile& model, const std::filesystem::path& path) {
  if (model.matrices.empty()) throw DataError("model '" + model.kind + "' has no matrices");
  detail::LineWriter out(path);
  auto& os = out.stream();
  os << "#model " << model.kind << '\n';
  bool first = true;
  for (const auto& [name, m] : model.matrices) {
    if (!first) os << "#matrix " << name << '\n';
    first = false;
    os << "#shape " << m.rows() << ' ' << m.cols() << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        if (j) os << ' ';
        os << format_real(m(i, j));
      }
      os << '\n';
    }
  }
  for (const auto& [name, value] : model.params) {
    os << "#param " << name << ' ' << format_real(value) << '\n';
  }
  out.close();
}

ModelFile read_model_file(const std::filesystem::path& path, const std::string& primary_name) {
  detail::LineReader in(path);
  ModelFile model;
  std::string_view line;
  if (!in.next(line)) in.fail("empty model file");
  auto head = detail::split(line);
  if (head.size() != 2 || head[0] != "#model") in.fail("expected '#model <kind>'");
  model.kind = std::string(head[1]);

  std::string pending_name = primary_name;
  while (in.next(line)) {
    auto tok = detail::split(line);
    if (tok.empty()) continue;
    if (tok[0] == "#matrix") {
      if (tok.size() != 2) in.fail("expected '#matrix <name>'");
      if (model.matrices.empty()) in.fail("'#matrix' before the primary matrix");
      pending_name = std::string(tok[1]);
    } else if (tok[0] == "#shape") {
      if (tok.size() != 3) in.fail("expected '#shape <rows> <cols>'");
      if (pending_name.empty()) in.fail("'#shape' without a preceding '#matrix <name>'");
      const long rows = in.parse_int(tok[1]);
      const long cols = in.parse_int(tok[2]);
      if (rows < 0 || cols < 0) in.fail("negative matrix shape");
      Eigen::MatrixXd m(rows, cols);
      for (long i = 0; i < rows; ++i) {
        if (!in.next(line)) in.fail("truncated matrix '" + pending_name + "'");
        auto vals = detail::split(line);
        if (vals.size() != static_cast<std::size_t>(cols)) {
          in.fail("matrix row has " + std::to_string(vals.size()) + " values, expected " +
                  std::to_string(cols));
        }
        for (long j = 0; j < cols; ++j) m(i, j) = in.parse_real(vals[j]);
      }
      model.matrices.emplace_back(std::move(pending_name), std::move(m));
      pending_name.clear();
    } else if (tok[0] == "#param") {
      if (tok.size() != 3) in.fail("expected '#param <name> <value>'");
      model.params.emplace_back(std::string(tok[1]), in.parse_real(tok[2]));
    } else {
      in.fail("unexpected line in model file");
    }
  }
  if (model.matrices.empty()) throw DataError(path.string() + ": model file has no matrices");
  return model;
}

std::string peek_model_kind(const std::filesystem::path& path) {
  detail::LineReader in(path);
  std::string_view line;
  if (!in.next(line)) in.fail("empty model file");
  auto head = detail::split(line);
  if (head.size() != 2 || head[0] != "#model") in.fail("expected '#model <kind>'");
  return std::string(head[1]);
}

}  // namespace pauc
