#include "tarma/timeseries.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

namespace fs = std::filesystem;
using namespace tarma;

namespace {

fs::path write_temp(const std::string& name, const std::string& text) {
    const auto dir = fs::temp_directory_path() / "tarma_ts_tests";
    fs::create_directories(dir);
    const auto path = dir / name;
    std::ofstream(path) << text;
    return path;
}

std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST(LoadCsv, ParsesNamedColumn) {
    const auto path = write_temp("price.csv", "date,price\n2020-01,1.0\n2020-02,2.0\n2020-03,3.0\n");
    const auto s = load_csv(path.string(), "price");
    EXPECT_EQ(s.values, (std::vector<double>{1.0, 2.0, 3.0}));
    ASSERT_EQ(s.timestamps.size(), 3u);
    EXPECT_EQ(s.timestamps[1], "2020-02");
}

TEST(LoadCsv, ColumnByIndexAndCrlf) {
    const auto path = write_temp("idx.csv", "a,b\r\n1,10\r\n\r\n2,20\r\n");
    const auto s = load_csv(path.string(), "1");
    EXPECT_EQ(s.values, (std::vector<double>{10.0, 20.0}));
    EXPECT_TRUE(s.timestamps.empty());
}

TEST(LoadCsv, EmptyDataSection) {
    const auto path = write_temp("empty.csv", "price\n");
    EXPECT_NE(error_of([&] { load_csv(path.string(), "price"); }).find("no observations"), std::string::npos);
}

TEST(LoadCsv, BadCellNamesRow) {
    const auto path = write_temp("bad.csv", "price\n1.0\nabc\n3.0\n");
    const auto msg = error_of([&] { load_csv(path.string(), "price"); });
    EXPECT_NE(msg.find("row 2"), std::string::npos) << msg;
}

TEST(LoadCsv, MissingFileAndColumn) {
    EXPECT_THROW(load_csv("/nonexistent/never.csv", "x"), ConfigError);
    const auto path = write_temp("cols.csv", "a\n1\n");
    EXPECT_THROW(load_csv(path.string(), "price"), ConfigError);
}

TEST(LoadCsv, NonFiniteRejected) {
    const auto path = write_temp("nan.csv", "v\n1\nnan\n");
    EXPECT_THROW(load_csv(path.string(), "v"), ConfigError);
}

TEST(LogReturns, Examples) {
    const auto r = log_returns(make_series({1.0, std::exp(1.0)}));
    ASSERT_EQ(r.size(), 1u);
    EXPECT_NEAR(r.values[0], 1.0, 1e-15);
    EXPECT_EQ(log_returns(make_series({3.5, 3.5, 3.5})).values, (std::vector<double>{0.0, 0.0}));
    const auto msg = error_of([] { log_returns(make_series({1.0, 0.0, 2.0})); });
    EXPECT_NE(msg.find("index 1"), std::string::npos) << msg;
    EXPECT_THROW(log_returns(make_series({1.0})), ConfigError);
}

TEST(LogReturns, InvertsExpCumsum) {
    std::mt19937_64 gen(7);
    std::normal_distribution<double> nd(0.0, 0.3);
    std::vector<double> z(500);
    for (auto& v : z) v = nd(gen);
    std::vector<double> y{1.0};
    double c = 0.0;
    for (double v : z) {
        c += v;
        y.push_back(std::exp(c));
    }
    const auto r = log_returns(make_series(y));
    ASSERT_EQ(r.size(), z.size());
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(r.values[i], z[i], 1e-12);
}

TEST(Split, Examples) {
    std::vector<double> v(336);
    std::iota(v.begin(), v.end(), 1.0);
    const auto [train, test] = split(make_series(v), 12);
    EXPECT_EQ(train.size(), 324u);
    EXPECT_EQ(test.size(), 12u);
    EXPECT_EQ(test.values.front(), 325.0);

    const auto five = make_series({1, 2, 3, 4, 5});
    EXPECT_THROW(split(five, 5), ConfigError);
    EXPECT_THROW(split(five, 0), ConfigError);
    const auto [a, b] = split(five, 1);
    EXPECT_EQ(a.size(), 4u);
    EXPECT_EQ(b.values, std::vector<double>{5.0});
}

TEST(Split, ConcatRoundTrip) {
    const auto s = make_series({0.1, -0.2, 0.3, 0.25, 7.0}, {"a", "b", "c", "d", "e"});
    for (std::size_t k = 1; k < s.size(); ++k) {
        const auto [train, test] = split(s, k);
        EXPECT_EQ(concat(train, test), s);
    }
}

TEST(Series, TimestampsMustIncrease) {
    EXPECT_THROW(make_series({1, 2}, {"2020-02", "2020-01"}), ConfigError);
    EXPECT_THROW(make_series({1, 2}, {"2020-01"}), ConfigError);
    EXPECT_THROW(make_series({}), ConfigError);
}

TEST(Series, DigestDistinguishesValues) {
    const std::vector<double> a{1.0, 2.0}, b{1.0, 2.0000000000000004};
    EXPECT_EQ(digest(a), digest(a));
    EXPECT_NE(digest(a), digest(b));
}
