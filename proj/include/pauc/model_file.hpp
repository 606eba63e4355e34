#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace pauc {

/// Generic container behind every model on disk.
///
/// Layout:
///
///     #model <kind>
///     #shape r c            <- first matrix, named by the kind
///     r lines of c values
///     #matrix <name>
///     #shape r c
///     ...
///     #param <name> <value>
///
/// The first matrix carries no `#matrix` line; readers receive it under
/// the name passed as `primary_name` to `read_model_file`.
struct ModelFile {
  std::string kind;
  std::vector<std::pair<std::string, Eigen::MatrixXd>> matrices;
  std::vector<std::pair<std::string, double>> params;

  const Eigen::MatrixXd& matrix(const std::string& name) const;
  double param(const std::string& name) const;
  double param_or(const std::string& name, double fallback) const;
  bool has_param(const std::string& name) const;

  void set_param(const std::string& name, double value);
};

void write_model_file(const ModelFile& model, const std::filesystem::path& path);
ModelFile read_model_file(const std::filesystem::path& path,
                          const std::string& primary_name = "primary");

/// Kind recorded on line 1 of a model file.
std::string peek_model_kind(const std::filesystem::path& path);

}  // namespace pauc
