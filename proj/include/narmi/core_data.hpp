#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace narmi {

using Index = Eigen::Index;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input data, schema, or formula.
class DataError : public Error {
 public:
  using Error::Error;
};

enum class Role { outcome, exposure, complete_confounder, incomplete_confounder, auxiliary, latent };
enum class Measurement { binary, continuous };

std::string_view to_string(Role role);
std::string_view to_string(Measurement m);
Role parse_role(std::string_view s);
Measurement parse_measurement(std::string_view s);

struct VariableSpec {
  std::string name;
  Role role = Role::auxiliary;
  Measurement measurement = Measurement::continuous;
};

/// Rectangular table with a missingness mask.
///
/// `mask(i, j)` is the missingness indicator M_j for row i and never changes
/// after construction. Engines fill missing cells on private copies through
/// set_imputed(); such cells keep mask == true but become available.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<VariableSpec> columns, Eigen::MatrixXd values, Mask mask);
  /// Fully observed table.
  Dataset(std::vector<VariableSpec> columns, Eigen::MatrixXd values);

  Index rows() const { return values_.rows(); }
  Index cols() const { return values_.cols(); }
  const std::vector<VariableSpec>& columns() const { return columns_; }
  const VariableSpec& column(Index j) const { return columns_[static_cast<std::size_t>(j)]; }

  std::optional<Index> find_column(std::string_view name) const;
  /// Throws DataError when the column does not exist.
  Index column_index(std::string_view name) const;
  Index outcome_column() const { return outcome_; }
  Index exposure_column() const { return exposure_; }

  bool missing(Index i, Index j) const { return mask_(i, j); }
  bool imputed(Index i, Index j) const { return imputed_(i, j); }
  bool available(Index i, Index j) const { return !mask_(i, j) || imputed_(i, j); }
  /// Value of an available cell; throws on a missing, unimputed cell.
  double at(Index i, Index j) const;
  /// Raw slot access for callers that have already checked availability.
  double raw(Index i, Index j) const { return values_(i, j); }

  /// Writes an imputation into a missing cell; observed cells are immutable.
  void set_imputed(Index i, Index j, double v);
  /// Forgets imputations in column j (cells revert to missing).
  void clear_imputations(Index j);

  const Eigen::MatrixXd& values() const { return values_; }
  const Mask& mask() const { return mask_; }
  const Mask& imputed_mask() const { return imputed_; }

  Index count_missing(Index j) const { return mask_.col(j).count(); }
  bool column_complete(Index j) const { return count_missing(j) == 0; }
  bool has_missing() const { return mask_.any(); }

  Dataset select_rows(std::span<const Index> rows) const;
  Dataset drop_column(std::string_view name) const;
  /// Appends a fully observed column.
  Dataset with_column(VariableSpec spec, const Eigen::VectorXd& values) const;
  /// Vertical concatenation of datasets with identical columns.
  static Dataset stack(std::span<const Dataset> parts);

 private:
  void validate();

  std::vector<VariableSpec> columns_;
  Eigen::MatrixXd values_;
  Mask mask_;
  Mask imputed_;
  Index outcome_ = -1;
  Index exposure_ = -1;
};

enum class Family { gaussian, bernoulli };
enum class Link { identity, logit };

/// response ~ main terms + pairwise interactions, with a GLM family.
///
/// A term name refers to a column; `M_<name>` refers to the missingness
/// indicator of column <name> unless a column literally called `M_<name>`
/// exists.
struct ModelFormula {
  std::string response;
  std::vector<std::string> main_terms;
  std::vector<std::pair<std::string, std::string>> interaction_terms;
  Family family = Family::gaussian;
  Link link = Link::identity;

  /// Parses "y ~ a + b + a:b". `a*b` expands to `a + b + a:b`.
  static ModelFormula parse(std::string_view spec, Family family);

  Index n_coef() const { return 1 + static_cast<Index>(main_terms.size() + interaction_terms.size()); }
  std::vector<std::string> coef_names() const;
  /// Position of a term in the coefficient vector; nullopt if absent.
  std::optional<Index> coef_index(std::string_view term) const;
  bool references(std::string_view name) const;
  std::string to_string() const;
  /// Enforces the hierarchical and family/link invariants.
  void validate() const;
};

Link canonical_link(Family family);

enum class MissingnessPattern { I, II, III, IV };
std::string_view to_string(MissingnessPattern p);

MissingnessPattern classify_pattern(Index row, const Dataset& data);

/// A formula resolved against a dataset's column layout.
class DesignMap {
 public:
  struct Term {
    Index column;
    bool indicator;  // uses the missingness mask instead of the value
  };
  struct Override {
    Index column;
    double value;
  };

  DesignMap(const ModelFormula& formula, const Dataset& data);

  Index size() const { return 1 + static_cast<Index>(mains_.size() + pairs_.size()); }
  Index response_column() const { return response_; }
  const std::vector<Term>& terms() const { return mains_; }
  /// True when every design entry can only take values in {0, 1}.
  bool all_binary() const { return all_binary_; }
  bool uses_column(Index column) const;

  void fill_row(const Dataset& data, Index row, Eigen::Ref<Eigen::VectorXd> out,
                const Override* override_value = nullptr) const;
  Eigen::MatrixXd matrix(const Dataset& data, std::span<const Index> rows) const;
  double linear_predictor(const Dataset& data, Index row, const Eigen::VectorXd& coef,
                          const Override* override_value = nullptr) const;
  /// Every value referenced by the design (and the response) is available.
  bool row_complete(const Dataset& data, Index row, bool with_response) const;

 private:
  double term_value(const Dataset& data, Index row, const Term& t, const Override* ov) const;

  Index response_;
  std::vector<Term> mains_;
  std::vector<std::pair<std::size_t, std::size_t>> pairs_;
  bool all_binary_ = true;
};

/// [1, main effects..., interaction products...] in declaration order.
Eigen::VectorXd design_row(const ModelFormula& formula, const Dataset& data, Index row);

/// Reads comma-delimited text with a header row. Columns follow `schema`
/// order; cells equal to `na_token` become missing.
Dataset load_dataset(const std::filesystem::path& path, const std::vector<VariableSpec>& schema,
                     std::string_view na_token = "NA");
Dataset parse_dataset(std::string_view text, const std::vector<VariableSpec>& schema,
                      std::string_view na_token = "NA");
/// Writes values with shortest round-trip formatting; missing cells (imputed
/// or not) are written as `na_token` unless `write_imputed` is set.
void write_dataset(const Dataset& data, const std::filesystem::path& path, std::string_view na_token = "NA",
                   bool write_imputed = false);
std::string format_dataset(const Dataset& data, std::string_view na_token = "NA", bool write_imputed = false);

/// Shortest decimal string that parses back to the same double.
std::string format_double(double v);

std::vector<Index> rows_where(const Dataset& data, const std::function<bool(Index)>& pred);

}  // namespace narmi
