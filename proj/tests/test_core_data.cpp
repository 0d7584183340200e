#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <random>

#include "narmi/core_data.hpp"
#include "toy.hpp"

using namespace narmi;
using toy::NA;

namespace {
std::vector<VariableSpec> schema() { return toy::yxc(); }
}  // namespace

TEST_CASE("na token marks exactly the missing cell") {
  const Dataset d = parse_dataset("y,x,c\n1.5,1,0\nNA,0,1\n-2,1,1\n", schema());
  CHECK(d.rows() == 3);
  CHECK(d.missing(1, 0));
  CHECK(d.mask().count() == 1);
  CHECK(d.at(0, 0) == 1.5);
  CHECK(d.at(2, 0) == -2.0);
}

TEST_CASE("custom na token") {
  const Dataset d = parse_dataset("y,x,c\n.,1,0\n3,0,.\n", schema(), ".");
  CHECK(d.missing(0, 0));
  CHECK(d.missing(1, 2));
  CHECK(d.mask().count() == 2);
}

TEST_CASE("binary column rejects values outside 0/1") {
  CHECK_THROWS_WITH_AS(parse_dataset("y,x,c\n1,2,0\n", schema()), doctest::Contains("binary domain violation"),
                       DataError);
}

TEST_CASE("loader errors") {
  CHECK_THROWS_AS(parse_dataset("", schema()), DataError);
  CHECK_THROWS_AS(parse_dataset("y,x,z\n1,0,1\n", schema()), DataError);
  CHECK_THROWS_AS(parse_dataset("y,x,c\n1,0,abc\n", schema()), DataError);
}

TEST_CASE("fully observed csv gives pattern I everywhere") {
  const Dataset d = parse_dataset("y,x,c\n1,1,0\n2,0,1\n3,1,1\n", schema());
  CHECK_FALSE(d.has_missing());
  for (Index i = 0; i < d.rows(); ++i) CHECK(classify_pattern(i, d) == MissingnessPattern::I);
}

TEST_CASE("pattern classification") {
  const Dataset d = toy::table(schema(), {{1, 1, 0}, {NA, 1, 0}, {1, NA, 0}, {NA, NA, 1}, {2, 0, NA}});
  CHECK(classify_pattern(0, d) == MissingnessPattern::I);
  CHECK(classify_pattern(1, d) == MissingnessPattern::II);
  CHECK(classify_pattern(2, d) == MissingnessPattern::III);
  CHECK(classify_pattern(3, d) == MissingnessPattern::IV);
  CHECK(classify_pattern(4, d) == MissingnessPattern::III);
}

TEST_CASE("auxiliary and latent columns count as non-outcome variables") {
  auto cols = schema();
  cols.push_back(toy::var("a", Role::auxiliary, Measurement::continuous));
  cols.push_back(toy::var("w", Role::latent, Measurement::binary));
  const Dataset d = toy::table(cols, {{1, 1, 0, NA, 0}, {1, 1, 0, 0.5, NA}, {NA, 1, 0, NA, 1}});
  CHECK(classify_pattern(0, d) == MissingnessPattern::III);
  CHECK(classify_pattern(1, d) == MissingnessPattern::III);
  CHECK(classify_pattern(2, d) == MissingnessPattern::IV);
}

TEST_CASE("patterns partition every random dataset") {
  std::mt19937_64 gen(3);
  std::bernoulli_distribution miss(0.3);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 50; ++i)
      rows.push_back({miss(gen) ? NA : 1.0, miss(gen) ? NA : 1.0, miss(gen) ? NA : 0.0});
    const Dataset d = toy::table(schema(), rows);
    Index counts[4] = {0, 0, 0, 0};
    for (Index i = 0; i < d.rows(); ++i) ++counts[static_cast<int>(classify_pattern(i, d))];
    CHECK(counts[0] + counts[1] + counts[2] + counts[3] == d.rows());
  }
}

TEST_CASE("design rows") {
  const Dataset d = toy::table(schema(), {{0, 1, 0}, {0, 0, 1}, {0, 1, 1}});
  const auto full = ModelFormula::parse("y ~ x + c + x:c", Family::gaussian);
  const Eigen::VectorXd r0 = design_row(full, d, 0);
  CHECK(r0.size() == 4);
  CHECK(r0[0] == 1.0);
  CHECK(r0[1] == 1.0);
  CHECK(r0[2] == 0.0);
  CHECK(r0[3] == 0.0);

  const Eigen::VectorXd r1 = design_row(ModelFormula::parse("y ~ x", Family::gaussian), d, 1);
  CHECK(r1.size() == 2);
  CHECK(r1[0] == 1.0);
  CHECK(r1[1] == 0.0);

  CHECK(design_row(full, d, 2)[3] == 1.0);
  CHECK((design_row(full, d, 2).array() == design_row(full, d, 2).array()).all());
}

TEST_CASE("design row on a missing cell throws until imputed") {
  Dataset d = toy::table(schema(), {{0, NA, 0}, {1, 1, 1}});
  const auto f = ModelFormula::parse("y ~ x + c", Family::gaussian);
  CHECK_THROWS_AS(design_row(f, d, 0), DataError);
  d.set_imputed(0, 1, 1.0);
  CHECK(design_row(f, d, 0)[1] == 1.0);
  CHECK(d.missing(0, 1));
  CHECK(d.available(0, 1));
  CHECK_THROWS_AS(d.set_imputed(1, 1, 0.0), DataError);
}

TEST_CASE("formula parsing") {
  const auto f = ModelFormula::parse("y ~ x*c + a", Family::bernoulli);
  CHECK(f.response == "y");
  CHECK(f.main_terms == std::vector<std::string>{"x", "c", "a"});
  REQUIRE(f.interaction_terms.size() == 1);
  CHECK(f.interaction_terms[0] == std::pair<std::string, std::string>{"x", "c"});
  CHECK(f.link == Link::logit);
  CHECK(f.n_coef() == 5);
  CHECK(f.coef_index("x:c") == 4);
  CHECK(f.coef_index("c:x") == 4);
  CHECK_FALSE(f.coef_index("d").has_value());
  CHECK_THROWS_AS(ModelFormula::parse("y ~ x:c:a", Family::gaussian), DataError);
  CHECK_THROWS_AS(ModelFormula::parse("y x", Family::gaussian), DataError);
  CHECK_THROWS_AS(ModelFormula::parse("y ~ x + x:c", Family::gaussian), DataError);
}

TEST_CASE("missingness indicator terms") {
  const Dataset d = toy::table(schema(), {{NA, 1, 0}, {1, 0, 1}});
  const auto f = ModelFormula::parse("c ~ x + M_y", Family::bernoulli);
  const Eigen::VectorXd r0 = design_row(f, d, 0);
  const Eigen::VectorXd r1 = design_row(f, d, 1);
  CHECK(r0[2] == 1.0);
  CHECK(r1[2] == 0.0);
}

TEST_CASE("csv round trip preserves values and mask") {
  auto cols = schema();
  cols.push_back(toy::var("a", Role::auxiliary, Measurement::continuous));
  const Dataset d = toy::table(cols, {{0.1, 1, 0, 1.0 / 3.0}, {NA, 0, 1, -2e-17}, {3.25, NA, NA, 12345.678901234}});
  const auto path = std::filesystem::temp_directory_path() / "narmi_roundtrip.csv";
  write_dataset(d, path);
  const Dataset back = load_dataset(path, cols);
  std::filesystem::remove(path);
  CHECK((back.mask() == d.mask()).all());
  for (Index i = 0; i < d.rows(); ++i)
    for (Index j = 0; j < d.cols(); ++j)
      if (!d.missing(i, j)) CHECK(back.at(i, j) == d.at(i, j));
}

TEST_CASE("shortest round-trip formatting") {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, -2.5, 123456789.0}) CHECK(std::stod(format_double(v)) == v);
  CHECK(format_double(0.5) == "0.5");
}

TEST_CASE("schema validation") {
  auto cols = schema();
  cols.push_back(toy::var("y2", Role::outcome, Measurement::continuous));
  CHECK_THROWS_AS(toy::table(cols, {{1, 1, 0, 1}}), DataError);
  CHECK_THROWS_AS(parse_role("bogus"), DataError);
  CHECK(parse_role("latent") == Role::latent);
}

TEST_CASE("stack and select") {
  const Dataset d = toy::table(schema(), {{1, 1, 0}, {NA, 0, 1}});
  const std::vector<Dataset> parts{d, d};
  const Dataset s = Dataset::stack(parts);
  CHECK(s.rows() == 4);
  CHECK(s.missing(3, 0));
  const std::vector<Index> rows{1, 1, 0};
  const Dataset sel = d.select_rows(rows);
  CHECK(sel.rows() == 3);
  CHECK(sel.missing(0, 0));
  CHECK(sel.at(2, 0) == 1.0);
}
