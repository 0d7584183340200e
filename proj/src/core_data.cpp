#include "narmi/core_data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace narmi {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

std::string_view to_string(Role role) {
  switch (role) {
    case Role::outcome: return "outcome";
    case Role::exposure: return "exposure";
    case Role::complete_confounder: return "complete_confounder";
    case Role::incomplete_confounder: return "incomplete_confounder";
    case Role::auxiliary: return "auxiliary";
    case Role::latent: return "latent";
  }
  return "?";
}

std::string_view to_string(Measurement m) { return m == Measurement::binary ? "binary" : "continuous"; }

Role parse_role(std::string_view s) {
  for (Role r : {Role::outcome, Role::exposure, Role::complete_confounder, Role::incomplete_confounder,
                 Role::auxiliary, Role::latent})
    if (to_string(r) == s) return r;
  throw DataError("unknown variable role '" + std::string(s) + "'");
}

Measurement parse_measurement(std::string_view s) {
  if (s == "binary") return Measurement::binary;
  if (s == "continuous") return Measurement::continuous;
  throw DataError("unknown measurement '" + std::string(s) + "'");
}

// ---------------------------------------------------------------- Dataset

Dataset::Dataset(std::vector<VariableSpec> columns, Eigen::MatrixXd values, Mask mask)
    : columns_(std::move(columns)), values_(std::move(values)), mask_(std::move(mask)) {
  imputed_ = Mask::Constant(values_.rows(), values_.cols(), false);
  validate();
}

Dataset::Dataset(std::vector<VariableSpec> columns, Eigen::MatrixXd values)
    : Dataset(std::move(columns), values, Mask::Constant(values.rows(), values.cols(), false)) {}

void Dataset::validate() {
  if (static_cast<Index>(columns_.size()) != values_.cols())
    throw DataError("column count does not match value table");
  if (mask_.rows() != values_.rows() || mask_.cols() != values_.cols())
    throw DataError("mask shape does not match value table");
  if (values_.rows() < 1) throw DataError("dataset has no rows");
  std::unordered_set<std::string> names;
  for (std::size_t j = 0; j < columns_.size(); ++j) {
    const auto& c = columns_[j];
    if (!names.insert(c.name).second) throw DataError("duplicate column name '" + c.name + "'");
    if (c.role == Role::outcome) {
      if (outcome_ >= 0) throw DataError("more than one outcome variable");
      outcome_ = static_cast<Index>(j);
    }
    if (c.role == Role::exposure) {
      if (exposure_ >= 0) throw DataError("more than one exposure variable");
      exposure_ = static_cast<Index>(j);
    }
    if (c.measurement == Measurement::binary) {
      for (Index i = 0; i < values_.rows(); ++i) {
        if (mask_(i, static_cast<Index>(j))) continue;
        const double v = values_(i, static_cast<Index>(j));
        if (v != 0.0 && v != 1.0)
          throw DataError("binary domain violation in column '" + c.name + "' row " + std::to_string(i));
      }
    }
  }
}

std::optional<Index> Dataset::find_column(std::string_view name) const {
  for (std::size_t j = 0; j < columns_.size(); ++j)
    if (columns_[j].name == name) return static_cast<Index>(j);
  return std::nullopt;
}

Index Dataset::column_index(std::string_view name) const {
  if (auto j = find_column(name)) return *j;
  throw DataError("unknown column '" + std::string(name) + "'");
}

double Dataset::at(Index i, Index j) const {
  if (!available(i, j))
    throw DataError("value missing and not imputed: column '" + column(j).name + "' row " + std::to_string(i));
  return values_(i, j);
}

void Dataset::set_imputed(Index i, Index j, double v) {
  if (!mask_(i, j)) throw DataError("attempt to overwrite observed cell in column '" + column(j).name + "'");
  values_(i, j) = v;
  imputed_(i, j) = true;
}

void Dataset::clear_imputations(Index j) { imputed_.col(j).setConstant(false); }

Dataset Dataset::select_rows(std::span<const Index> rows) const {
  Eigen::MatrixXd v(static_cast<Index>(rows.size()), cols());
  Mask m(static_cast<Index>(rows.size()), cols());
  Mask imp(static_cast<Index>(rows.size()), cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    v.row(static_cast<Index>(r)) = values_.row(rows[r]);
    m.row(static_cast<Index>(r)) = mask_.row(rows[r]);
    imp.row(static_cast<Index>(r)) = imputed_.row(rows[r]);
  }
  Dataset out(columns_, std::move(v), std::move(m));
  out.imputed_ = std::move(imp);
  return out;
}

Dataset Dataset::drop_column(std::string_view name) const {
  const Index drop = column_index(name);
  std::vector<VariableSpec> cols;
  std::vector<Index> keep;
  for (Index j = 0; j < this->cols(); ++j) {
    if (j == drop) continue;
    cols.push_back(column(j));
    keep.push_back(j);
  }
  Eigen::MatrixXd v(rows(), static_cast<Index>(keep.size()));
  Mask m(rows(), static_cast<Index>(keep.size()));
  Mask imp(rows(), static_cast<Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    v.col(static_cast<Index>(k)) = values_.col(keep[k]);
    m.col(static_cast<Index>(k)) = mask_.col(keep[k]);
    imp.col(static_cast<Index>(k)) = imputed_.col(keep[k]);
  }
  Dataset out(std::move(cols), std::move(v), std::move(m));
  out.imputed_ = std::move(imp);
  return out;
}

Dataset Dataset::with_column(VariableSpec spec, const Eigen::VectorXd& values) const {
  if (values.size() != rows()) throw DataError("new column has wrong length");
  auto cols = columns_;
  cols.push_back(std::move(spec));
  Eigen::MatrixXd v(rows(), this->cols() + 1);
  v << values_, values;
  Mask m(rows(), this->cols() + 1);
  m << mask_, Mask::Constant(rows(), 1, false);
  Mask imp(rows(), this->cols() + 1);
  imp << imputed_, Mask::Constant(rows(), 1, false);
  Dataset out(std::move(cols), std::move(v), std::move(m));
  out.imputed_ = std::move(imp);
  return out;
}

Dataset Dataset::stack(std::span<const Dataset> parts) {
  if (parts.empty()) throw DataError("nothing to stack");
  Index n = 0;
  for (const auto& p : parts) {
    if (p.cols() != parts[0].cols()) throw DataError("stacked datasets differ in columns");
    for (Index j = 0; j < p.cols(); ++j)
      if (p.column(j).name != parts[0].column(j).name) throw DataError("stacked datasets differ in columns");
    n += p.rows();
  }
  Eigen::MatrixXd v(n, parts[0].cols());
  Mask m(n, parts[0].cols());
  Mask imp(n, parts[0].cols());
  Index at = 0;
  for (const auto& p : parts) {
    v.middleRows(at, p.rows()) = p.values_;
    m.middleRows(at, p.rows()) = p.mask_;
    imp.middleRows(at, p.rows()) = p.imputed_;
    at += p.rows();
  }
  Dataset out(parts[0].columns_, std::move(v), std::move(m));
  out.imputed_ = std::move(imp);
  return out;
}

// ----------------------------------------------------------- ModelFormula

Link canonical_link(Family family) { return family == Family::gaussian ? Link::identity : Link::logit; }

ModelFormula ModelFormula::parse(std::string_view spec, Family family) {
  const auto tilde = spec.find('~');
  if (tilde == std::string_view::npos) throw DataError("formula lacks '~': " + std::string(spec));
  ModelFormula f;
  f.family = family;
  f.link = canonical_link(family);
  f.response = trim(spec.substr(0, tilde));
  if (f.response.empty()) throw DataError("formula lacks a response: " + std::string(spec));
  auto add_main = [&](const std::string& t) {
    if (std::find(f.main_terms.begin(), f.main_terms.end(), t) == f.main_terms.end()) f.main_terms.push_back(t);
  };
  std::vector<std::pair<std::string, std::string>> pairs;
  const std::string rhs = trim(spec.substr(tilde + 1));
  if (rhs.empty() || rhs == "1") {
    f.validate();
    return f;
  }
  for (const auto& raw : split(rhs, '+')) {
    if (raw.empty()) throw DataError("empty term in formula: " + std::string(spec));
    if (raw == "1") continue;
    const char sep = raw.find('*') != std::string::npos ? '*' : ':';
    const auto parts = split(raw, sep);
    if (parts.size() == 1) {
      add_main(parts[0]);
    } else if (parts.size() == 2) {
      if (parts[0].empty() || parts[1].empty()) throw DataError("malformed term '" + raw + "'");
      if (sep == '*') {
        add_main(parts[0]);
        add_main(parts[1]);
      }
      pairs.emplace_back(parts[0], parts[1]);
    } else {
      throw DataError("only pairwise interactions are supported: '" + raw + "'");
    }
  }
  for (auto& p : pairs) {
    const bool dup = std::any_of(f.interaction_terms.begin(), f.interaction_terms.end(), [&](const auto& q) {
      return (q.first == p.first && q.second == p.second) || (q.first == p.second && q.second == p.first);
    });
    if (!dup) f.interaction_terms.push_back(p);
  }
  f.validate();
  return f;
}

std::vector<std::string> ModelFormula::coef_names() const {
  std::vector<std::string> names{"(Intercept)"};
  for (const auto& t : main_terms) names.push_back(t);
  for (const auto& [a, b] : interaction_terms) names.push_back(a + ":" + b);
  return names;
}

std::optional<Index> ModelFormula::coef_index(std::string_view term) const {
  for (std::size_t k = 0; k < main_terms.size(); ++k)
    if (main_terms[k] == term) return static_cast<Index>(1 + k);
  const auto colon = term.find(':');
  if (colon != std::string_view::npos) {
    const auto a = term.substr(0, colon), b = term.substr(colon + 1);
    for (std::size_t k = 0; k < interaction_terms.size(); ++k) {
      const auto& p = interaction_terms[k];
      if ((p.first == a && p.second == b) || (p.first == b && p.second == a))
        return static_cast<Index>(1 + main_terms.size() + k);
    }
  }
  return std::nullopt;
}

bool ModelFormula::references(std::string_view name) const {
  if (response == name) return true;
  for (const auto& t : main_terms)
    if (t == name) return true;
  return false;
}

std::string ModelFormula::to_string() const {
  std::string s = response + " ~ ";
  const auto names = coef_names();
  if (names.size() == 1) return s + "1";
  for (std::size_t k = 1; k < names.size(); ++k) {
    if (k > 1) s += " + ";
    s += names[k];
  }
  return s;
}

void ModelFormula::validate() const {
  if (canonical_link(family) != link) throw DataError("unsupported family/link combination in '" + to_string() + "'");
  for (const auto& t : main_terms)
    if (t == response) throw DataError("response appears as a predictor in '" + to_string() + "'");
  for (const auto& [a, b] : interaction_terms) {
    if (a == b) throw DataError("self-interaction '" + a + ":" + b + "' is not supported");
    for (const auto& m : {a, b})
      if (std::find(main_terms.begin(), main_terms.end(), m) == main_terms.end())
        throw DataError("interaction member '" + m + "' is not a main term (hierarchical formulas only)");
  }
}

// ---------------------------------------------------------------- patterns

std::string_view to_string(MissingnessPattern p) {
  switch (p) {
    case MissingnessPattern::I: return "I";
    case MissingnessPattern::II: return "II";
    case MissingnessPattern::III: return "III";
    case MissingnessPattern::IV: return "IV";
  }
  return "?";
}

MissingnessPattern classify_pattern(Index row, const Dataset& data) {
  const Index y = data.outcome_column();
  const bool y_missing = y >= 0 && data.missing(row, y);
  bool other_missing = false;
  for (Index j = 0; j < data.cols(); ++j)
    if (j != y && data.missing(row, j)) {
      other_missing = true;
      break;
    }
  if (!y_missing) return other_missing ? MissingnessPattern::III : MissingnessPattern::I;
  return other_missing ? MissingnessPattern::IV : MissingnessPattern::II;
}

// --------------------------------------------------------------- DesignMap

namespace {

DesignMap::Term resolve_term(const std::string& name, const Dataset& data) {
  if (auto j = data.find_column(name)) return {*j, false};
  if (name.size() > 2 && name.compare(0, 2, "M_") == 0)
    if (auto j = data.find_column(std::string_view(name).substr(2))) return {*j, true};
  throw DataError("formula term '" + name + "' matches no column");
}

}  // namespace

DesignMap::DesignMap(const ModelFormula& formula, const Dataset& data) {
  formula.validate();
  response_ = data.column_index(formula.response);
  for (const auto& t : formula.main_terms) {
    mains_.push_back(resolve_term(t, data));
    const auto& back = mains_.back();
    if (!back.indicator && data.column(back.column).measurement != Measurement::binary) all_binary_ = false;
  }
  auto pos = [&](const std::string& name) {
    return static_cast<std::size_t>(
        std::find(formula.main_terms.begin(), formula.main_terms.end(), name) - formula.main_terms.begin());
  };
  for (const auto& [a, b] : formula.interaction_terms) pairs_.emplace_back(pos(a), pos(b));
}

bool DesignMap::uses_column(Index column) const {
  return std::any_of(mains_.begin(), mains_.end(), [&](const Term& t) { return !t.indicator && t.column == column; });
}

double DesignMap::term_value(const Dataset& data, Index row, const Term& t, const Override* ov) const {
  if (t.indicator) return data.missing(row, t.column) ? 1.0 : 0.0;
  if (ov && ov->column == t.column) return ov->value;
  return data.at(row, t.column);
}

void DesignMap::fill_row(const Dataset& data, Index row, Eigen::Ref<Eigen::VectorXd> out,
                         const Override* ov) const {
  out[0] = 1.0;
  Index k = 1;
  for (const auto& t : mains_) out[k++] = term_value(data, row, t, ov);
  for (const auto& [a, b] : pairs_) out[k++] = out[1 + static_cast<Index>(a)] * out[1 + static_cast<Index>(b)];
}

Eigen::MatrixXd DesignMap::matrix(const Dataset& data, std::span<const Index> rows) const {
  Eigen::MatrixXd x(static_cast<Index>(rows.size()), size());
  x.col(0).setOnes();
  for (std::size_t k = 0; k < mains_.size(); ++k) {
    const auto& t = mains_[k];
    auto col = x.col(static_cast<Index>(k + 1));
    for (std::size_t r = 0; r < rows.size(); ++r) col[static_cast<Index>(r)] = term_value(data, rows[r], t, nullptr);
  }
  const Index off = 1 + static_cast<Index>(mains_.size());
  for (std::size_t k = 0; k < pairs_.size(); ++k)
    x.col(off + static_cast<Index>(k)) =
        x.col(1 + static_cast<Index>(pairs_[k].first)).cwiseProduct(x.col(1 + static_cast<Index>(pairs_[k].second)));
  return x;
}

double DesignMap::linear_predictor(const Dataset& data, Index row, const Eigen::VectorXd& coef,
                                   const Override* ov) const {
  double vals[64];
  std::vector<double> heap;
  double* v = vals;
  if (mains_.size() > 64) {
    heap.resize(mains_.size());
    v = heap.data();
  }
  double eta = coef[0];
  for (std::size_t k = 0; k < mains_.size(); ++k) {
    v[k] = term_value(data, row, mains_[k], ov);
    eta += coef[static_cast<Index>(k + 1)] * v[k];
  }
  const Index off = 1 + static_cast<Index>(mains_.size());
  for (std::size_t k = 0; k < pairs_.size(); ++k)
    eta += coef[off + static_cast<Index>(k)] * v[pairs_[k].first] * v[pairs_[k].second];
  return eta;
}

bool DesignMap::row_complete(const Dataset& data, Index row, bool with_response) const {
  if (with_response && !data.available(row, response_)) return false;
  for (const auto& t : mains_)
    if (!t.indicator && !data.available(row, t.column)) return false;
  return true;
}

Eigen::VectorXd design_row(const ModelFormula& formula, const Dataset& data, Index row) {
  const DesignMap map(formula, data);
  Eigen::VectorXd out(map.size());
  map.fill_row(data, row, out);
  return out;
}

// --------------------------------------------------------------------- CSV

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

Dataset parse_dataset(std::string_view text, const std::vector<VariableSpec>& schema, std::string_view na_token) {
  std::vector<std::string> lines;
  {
    std::size_t start = 0;
    while (start < text.size()) {
      auto pos = text.find('\n', start);
      if (pos == std::string_view::npos) pos = text.size();
      auto line = trim(text.substr(start, pos - start));
      if (!line.empty()) lines.push_back(std::move(line));
      start = pos + 1;
    }
  }
  if (lines.empty()) throw DataError("empty file");
  const auto header = split(lines[0], ',');
  std::vector<Index> target(header.size());
  std::vector<bool> seen(schema.size(), false);
  for (std::size_t h = 0; h < header.size(); ++h) {
    auto it = std::find_if(schema.begin(), schema.end(), [&](const VariableSpec& s) { return s.name == header[h]; });
    if (it == schema.end()) throw DataError("unknown column '" + header[h] + "'");
    const auto j = static_cast<std::size_t>(it - schema.begin());
    if (seen[j]) throw DataError("duplicate column '" + header[h] + "'");
    seen[j] = true;
    target[h] = static_cast<Index>(j);
  }
  for (std::size_t j = 0; j < schema.size(); ++j)
    if (!seen[j]) throw DataError("schema column '" + schema[j].name + "' absent from header");
  const Index n = static_cast<Index>(lines.size()) - 1;
  if (n < 1) throw DataError("empty file");
  Eigen::MatrixXd values = Eigen::MatrixXd::Zero(n, static_cast<Index>(schema.size()));
  Mask mask = Mask::Constant(n, static_cast<Index>(schema.size()), false);
  for (Index i = 0; i < n; ++i) {
    const auto cells = split(lines[static_cast<std::size_t>(i + 1)], ',');
    if (cells.size() != header.size())
      throw DataError("row " + std::to_string(i + 1) + " has " + std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(header.size()));
    for (std::size_t h = 0; h < cells.size(); ++h) {
      const auto& c = cells[h];
      if (c == na_token) {
        mask(i, target[h]) = true;
        continue;
      }
      double v = 0.0;
      const auto res = std::from_chars(c.data(), c.data() + c.size(), v);
      if (res.ec != std::errc() || res.ptr != c.data() + c.size())
        throw DataError("non-numeric cell '" + c + "' in column '" + header[h] + "' row " + std::to_string(i + 1));
      values(i, target[h]) = v;
    }
  }
  return Dataset(schema, std::move(values), std::move(mask));
}

Dataset load_dataset(const std::filesystem::path& path, const std::vector<VariableSpec>& schema,
                     std::string_view na_token) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_dataset(ss.str(), schema, na_token);
}

std::string format_dataset(const Dataset& data, std::string_view na_token, bool write_imputed) {
  std::string out;
  for (Index j = 0; j < data.cols(); ++j) {
    if (j) out += ',';
    out += data.column(j).name;
  }
  out += '\n';
  for (Index i = 0; i < data.rows(); ++i) {
    for (Index j = 0; j < data.cols(); ++j) {
      if (j) out += ',';
      if (data.missing(i, j) && !(write_imputed && data.imputed(i, j)))
        out += na_token;
      else
        out += format_double(data.raw(i, j));
    }
    out += '\n';
  }
  return out;
}

void write_dataset(const Dataset& data, const std::filesystem::path& path, std::string_view na_token,
                   bool write_imputed) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << format_dataset(data, na_token, write_imputed);
}

std::vector<Index> rows_where(const Dataset& data, const std::function<bool(Index)>& pred) {
  std::vector<Index> rows;
  for (Index i = 0; i < data.rows(); ++i)
    if (pred(i)) rows.push_back(i);
  return rows;
}

}  // namespace narmi
