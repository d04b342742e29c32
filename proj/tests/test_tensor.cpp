#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <string>

#include "grf/param.hpp"
#include "grf/tensor.hpp"

using grf::ConfigError;
using grf::DimError;
using grf::IoError;
using grf::Tensor;

TEST_CASE("shape_numel rejects non-positive dims") {
    CHECK(grf::shape_numel({2, 3, 4}) == 24);
    CHECK_THROWS_AS(grf::shape_numel({2, 0}), DimError);
    CHECK_THROWS_AS(grf::shape_numel({-1, 3}), DimError);
}

TEST_CASE("tensor construction and indexing") {
    Tensor<double> t({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.rank() == 2);
    CHECK(t.numel() == 6);
    CHECK(t.at({1, 2}) == 6.0);
    CHECK(t.at({0, 0}) == 1.0);
    CHECK_THROWS_AS(t.at({2, 0}), DimError);
    CHECK_THROWS_AS(t.at({0}), DimError);

    Tensor<double> z = Tensor<double>::zeros({4});
    for (int64_t i = 0; i < z.numel(); ++i) CHECK(z[i] == 0.0);

    Tensor<double> f = Tensor<double>::full({2, 2}, 7.5);
    CHECK(f.at({1, 1}) == 7.5);

    CHECK(Tensor<double>::scalar(3.0).numel() == 1);
}

TEST_CASE("tensor rank is capped at four") {
    CHECK_NOTHROW(Tensor<double>({2, 2, 2, 2}));
    CHECK_THROWS_AS(Tensor<double>({2, 2, 2, 2, 2}), DimError);
}

TEST_CASE("tensor value-count mismatch is rejected") {
    CHECK_THROWS_AS(Tensor<double>({2, 2}, {1.0, 2.0, 3.0}), DimError);
}

TEST_CASE("tensor copies are independent") {
    Tensor<double> a({2}, {1, 2});
    Tensor<double> b = a;
    b[0] = 99;
    CHECK(a[0] == 1.0);
}

TEST_CASE("all_finite flags NaN and infinity") {
    Tensor<double> t({3}, {1.0, 2.0, 3.0});
    CHECK(t.all_finite());
    t[1] = std::numeric_limits<double>::quiet_NaN();
    CHECK_FALSE(t.all_finite());
    t[1] = std::numeric_limits<double>::infinity();
    CHECK_FALSE(t.all_finite());
}

TEST_CASE("max_abs_diff") {
    Tensor<double> a({3}, {1, 2, 3});
    Tensor<double> b({3}, {1, 2.5, 2});
    CHECK(a.max_abs_diff(b) == 1.0);
    Tensor<double> c({2}, {1, 2});
    CHECK_THROWS_AS(a.max_abs_diff(c), DimError);
}

TEST_CASE("rng streams are reproducible and respect bounds") {
    grf::Rng r1(42), r2(42), r3(43);
    bool identical = true, differs = false;
    for (int i = 0; i < 200; ++i) {
        double a = r1.uniform(-1.0, 1.0);
        double b = r2.uniform(-1.0, 1.0);
        double c = r3.uniform(-1.0, 1.0);
        identical = identical && (a == b);
        differs = differs || (a != c);
        CHECK(a >= -1.0);
        CHECK(a < 1.0);
    }
    CHECK(identical);
    CHECK(differs);

    grf::Rng n1(7), n2(7);
    for (int i = 0; i < 50; ++i) CHECK(n1.normal(0.0, 0.1) == n2.normal(0.0, 0.1));
}

TEST_CASE("memory tracking follows tensor buffers") {
    const long long before_live = grf::memtrack::live_bytes();
    grf::memtrack::reset_peak();
    {
        Tensor<double> big({64, 64});
        CHECK(grf::memtrack::live_bytes() >= before_live + 64 * 64 * 8);
        CHECK(grf::memtrack::peak_bytes() >= before_live + 64 * 64 * 8);
    }
    CHECK(grf::memtrack::live_bytes() == before_live);
    CHECK(grf::memtrack::peak_bytes() >= before_live + 64 * 64 * 8);
}

TEST_CASE("param store rejects duplicate names and counts totals") {
    grf::ParamStore<double> ps;
    auto w = ps.add("layer.w", Tensor<double>::full({3, 4}, 1.0));
    ps.add("layer.b", Tensor<double>::zeros({4}));
    CHECK_THROWS_AS(ps.add("layer.w", Tensor<double>::zeros({1})), ConfigError);
    CHECK(ps.total_count() == 16);
    CHECK(ps.find("layer.b") != nullptr);
    CHECK(ps.find("nope") == nullptr);

    w->grad.fill(2.0);
    ps.zero_grads();
    CHECK(w->grad.max_abs_diff(Tensor<double>::zeros({3, 4})) == 0.0);
}

TEST_CASE("count_parameters groups by top-level name segment") {
    grf::ParamStore<double> ps;
    ps.add("proj.A.weight", Tensor<double>::zeros({2, 3}));
    ps.add("proj.V.weight", Tensor<double>::zeros({2, 3}));
    ps.add("head.fc1.weight", Tensor<double>::zeros({3, 3}));
    auto [total, groups] = grf::count_parameters(ps);
    CHECK(total == 21);
    CHECK(groups.at("proj") == 12);
    CHECK(groups.at("head") == 9);
}

namespace {

std::string temp_path(const char* stem) {
    return std::string("./") + stem + std::to_string(::getpid()) + ".ckpt";
}

}  // namespace

TEST_CASE("checkpoint round trip preserves doubles exactly") {
    grf::ParamStore<double> ps;
    auto a = ps.add("b.second", Tensor<double>({2, 2}, {0.1, -1.0 / 3.0, 1e-300, 12345.6789}));
    auto b = ps.add("a.first", Tensor<double>({3}, {1.0, 2.0, 3.0}));
    const std::string path = temp_path("roundtrip");
    grf::save_checkpoint(ps, path);

    grf::ParamStore<double> fresh;
    fresh.add("b.second", Tensor<double>::zeros({2, 2}));
    fresh.add("a.first", Tensor<double>::zeros({3}));
    grf::load_checkpoint(fresh, path);
    CHECK(fresh.find("b.second")->value.max_abs_diff(a->value) == 0.0);
    CHECK(fresh.find("a.first")->value.max_abs_diff(b->value) == 0.0);

    // records come out sorted by name
    std::ifstream in(path);
    std::string first_line;
    std::getline(in, first_line);
    CHECK(first_line.substr(0, 8) == "a.first,");
    in.close();
    std::remove(path.c_str());
}

TEST_CASE("checkpoint mismatches name the offending parameter") {
    grf::ParamStore<double> ps;
    ps.add("w1", Tensor<double>({2}, {1, 2}));
    ps.add("w2", Tensor<double>({2}, {3, 4}));
    const std::string path = temp_path("mismatch");
    grf::save_checkpoint(ps, path);

    SECTION("missing parameter") {
        grf::ParamStore<double> other;
        other.add("w1", Tensor<double>::zeros({2}));
        other.add("w3", Tensor<double>::zeros({2}));
        try {
            grf::load_checkpoint(other, path);
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(std::string(e.what()).find("w3") != std::string::npos);
        }
    }
    SECTION("shape mismatch") {
        grf::ParamStore<double> other;
        other.add("w1", Tensor<double>::zeros({3}));
        other.add("w2", Tensor<double>::zeros({2}));
        try {
            grf::load_checkpoint(other, path);
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(std::string(e.what()).find("w1") != std::string::npos);
        }
    }
    SECTION("extra record") {
        grf::ParamStore<double> other;
        other.add("w1", Tensor<double>::zeros({2}));
        try {
            grf::load_checkpoint(other, path);
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(std::string(e.what()).find("w2") != std::string::npos);
        }
    }
    std::remove(path.c_str());
}

TEST_CASE("missing checkpoint file raises IoError") {
    grf::ParamStore<double> ps;
    ps.add("w", Tensor<double>::zeros({1}));
    CHECK_THROWS_AS(grf::load_checkpoint(ps, "./does_not_exist.ckpt"), IoError);
}
