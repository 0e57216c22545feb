#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "mve/timeseries.hpp"

using namespace mve;

namespace {

std::string write_temp(const std::string& name, const std::string& body) {
    auto path = std::filesystem::temp_directory_path() / name;
    std::ofstream out(path);
    out << body;
    return path.string();
}

} // namespace

TEST_CASE("month index round trip") {
    CHECK(parse_month("2000-01") == 24000);
    CHECK(parse_month("2000-12") == 24011);
    CHECK(parse_month("1999-12") == 23999);
    CHECK(parse_month("0000-01") == 0);
    CHECK(format_month(24000) == "2000-01");
    CHECK(format_month(0) == "0000-01");
    for (std::int64_t t : {0, 1, 11, 12, 24000, 119999})
        CHECK(parse_month(format_month(t)) == t);
}

TEST_CASE("month parsing rejects malformed input") {
    CHECK_THROWS_AS(parse_month("2000-13"), DataError);
    CHECK_THROWS_AS(parse_month("2000-00"), DataError);
    CHECK_THROWS_AS(parse_month("2000/01"), DataError);
    CHECK_THROWS_AS(parse_month("200001"), DataError);
    CHECK_THROWS_AS(parse_month("2000-1"), DataError);
    CHECK_THROWS_AS(parse_month(""), DataError);
    CHECK_THROWS_AS(format_month(-1), DataError);
    CHECK_THROWS_AS(format_month(120000), DataError);
}

TEST_CASE("values print with 12 significant digits") {
    CHECK(format_value(1.0) == "1");
    CHECK(format_value(-0.5) == "-0.5");
    CHECK(format_value(1.0 / 3.0) == "0.333333333333");
    CHECK(format_value(123456789012345.0) == "1.23456789012e+14");
}

TEST_CASE("csv load and write round trip with missing cells") {
    const std::string body =
        "time,x,y\n"
        "2000-01,1.5,\n"
        "2000-02,-2,0.25\n"
        "2000-03,,3\n";
    auto path = write_temp("mve_ts_roundtrip.csv", body);
    SeriesPanel p = load_csv(path);

    REQUIRE(p.variables == std::vector<std::string>{"x", "y"});
    REQUIRE(p.length() == 3);
    CHECK(p.times.front() == parse_month("2000-01"));
    CHECK(p.at(0, 0) == 1.5);
    CHECK_FALSE(p.present(1, 0));
    CHECK(std::isnan(p.at(1, 0)));
    CHECK(p.at(0, 1) == -2.0);
    CHECK(p.at(1, 2) == 3.0);
    CHECK_FALSE(p.present(0, 2));

    auto out_path = write_temp("mve_ts_roundtrip_out.csv", "");
    write_csv(p, out_path);
    SeriesPanel q = load_csv(out_path);
    CHECK(q.variables == p.variables);
    CHECK(q.times == p.times);
    CHECK(q.mask == p.mask);
    for (std::size_t v = 0; v < 2; ++v)
        for (std::size_t i = 0; i < 3; ++i)
            if (p.present(v, i)) CHECK(q.at(v, i) == p.at(v, i));
}

TEST_CASE("csv loader rejects structural problems") {
    CHECK_THROWS_AS(load_csv(write_temp("mve_ts_a.csv", "date,x\n2000-01,1\n")), DataError);
    CHECK_THROWS_AS(
        load_csv(write_temp("mve_ts_b.csv", "time,x\n2000-01,1\n2000-01,2\n")), DataError);
    CHECK_THROWS_AS(
        load_csv(write_temp("mve_ts_c.csv", "time,x\n2000-02,1\n2000-01,2\n")), DataError);
    CHECK_THROWS_AS(
        load_csv(write_temp("mve_ts_d.csv", "time,x\n2000-01,1\n2000-03,2\n")), DataError);
    CHECK_THROWS_AS(load_csv(write_temp("mve_ts_e.csv", "time,x\n2000-01,oops\n")), DataError);
    CHECK_THROWS_AS(load_csv(write_temp("mve_ts_f.csv", "time,x\n2000-01,1,2\n")), DataError);
    CHECK_THROWS_AS(load_csv(write_temp("mve_ts_g.csv", "")), DataError);
    CHECK_THROWS_AS(load_csv("/nonexistent/mve.csv"), DataError);
    CHECK_THROWS_AS(load_csv(write_temp("mve_ts_h.csv", "time,x\n2000-01,1\n"), {"y"}),
                    DataError);
}

TEST_CASE("windows style line endings are accepted") {
    auto path = write_temp("mve_ts_crlf.csv", "time,x\r\n2000-01,1\r\n2000-02,2\r\n");
    SeriesPanel p = load_csv(path);
    CHECK(p.length() == 2);
    CHECK(p.at(0, 1) == 2.0);
}

TEST_CASE("standardization uses population moments over the training span") {
    SeriesPanel p;
    p.variables = {"x"};
    p.times = {0, 1, 2, 3};
    p.values = {{1.0, 2.0, 3.0, 4.0}};
    p.mask = {{1, 1, 1, 1}};

    auto all = compute_stats(p);
    CHECK(all.mean[0] == Catch::Approx(2.5));
    CHECK(all.sd[0] == Catch::Approx(std::sqrt(1.25)));

    auto trained = compute_stats(p, 1); // only t = 0, 1
    CHECK(trained.mean[0] == Catch::Approx(1.5));
    CHECK(trained.sd[0] == Catch::Approx(0.5));

    SeriesPanel z = apply_stats(p, trained);
    CHECK(z.at(0, 0) == Catch::Approx(-1.0));
    CHECK(z.at(0, 3) == Catch::Approx(5.0));
    CHECK(destandardize_value(trained, "x", z.at(0, 3)) == Catch::Approx(4.0));

    auto [zz, stats] = standardize(p);
    CHECK(stats.mean[0] == Catch::Approx(2.5));
    CHECK(zz.at(0, 0) == Catch::Approx((1.0 - 2.5) / std::sqrt(1.25)));
}

TEST_CASE("standardization skips masked cells and rejects degenerate spans") {
    SeriesPanel p;
    p.variables = {"x"};
    p.times = {0, 1, 2};
    p.values = {{1.0, 99.0, 3.0}};
    p.mask = {{1, 0, 1}};
    auto stats = compute_stats(p);
    CHECK(stats.mean[0] == Catch::Approx(2.0));

    SeriesPanel flat;
    flat.variables = {"x"};
    flat.times = {0, 1};
    flat.values = {{5.0, 5.0}};
    flat.mask = {{1, 1}};
    CHECK_THROWS_AS(compute_stats(flat), DataError);

    CHECK_THROWS_AS(compute_stats(p, 0), DataError); // single present value
}

TEST_CASE("panel validation and variable lookup") {
    SeriesPanel p;
    p.variables = {"x"};
    p.times = {5, 6};
    p.values = {{1.0, 2.0}};
    p.mask = {{1, 1}};
    p.validate();
    CHECK(p.var_index("x") == 0);
    CHECK_THROWS_AS(p.var_index("z"), DataError);
    CHECK(p.time_pos(6).value() == 1);
    CHECK_FALSE(p.time_pos(7).has_value());
    CHECK_FALSE(p.time_pos(4).has_value());

    p.add_variable("y", {3.0, 4.0}, {1, 0});
    CHECK(p.var_index("y") == 1);
    CHECK_THROWS_AS(p.add_variable("y", {0.0, 0.0}, {1, 1}), DataError);
    CHECK_THROWS_AS(p.add_variable("w", {0.0}, {1}), DataError);

    SeriesPanel gap = p;
    gap.times = {5, 7};
    CHECK_THROWS_AS(gap.validate(), DataError);
}

TEST_CASE("noise injection is deterministic and mask independent") {
    SeriesPanel p;
    p.variables = {"x", "y"};
    p.times = {0, 1, 2};
    p.values = {{1.0, 2.0, 3.0}, {4.0, 5.0, 6.0}};
    p.mask = {{1, 1, 1}, {1, 1, 1}};

    SeriesPanel a = inject_noise(p, 0.5, 42);
    SeriesPanel b = inject_noise(p, 0.5, 42);
    CHECK(a.values == b.values);
    SeriesPanel c = inject_noise(p, 0.5, 43);
    CHECK(a.values != c.values);

    SeriesPanel unchanged = inject_noise(p, 0.0, 42);
    CHECK(unchanged.values == p.values);

    // masking a cell must not shift the noise drawn for later cells
    SeriesPanel holed = p;
    holed.mask[0][1] = 0;
    SeriesPanel h = inject_noise(holed, 0.5, 42);
    CHECK(h.at(0, 2) == a.at(0, 2));
    CHECK(h.at(1, 0) == a.at(1, 0));
    CHECK(h.at(0, 1) == p.at(0, 1)); // masked cell untouched
    CHECK(h.mask == holed.mask);

    CHECK_THROWS_AS(inject_noise(p, -0.1, 1), ConfigError);
}
