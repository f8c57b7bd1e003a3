#include <catch2/catch_amalgamated.hpp>

#include "kfacbench/fisher.hpp"
#include "test_util.hpp"

using namespace kfacbench;
using testutil::rel_frob;

namespace {

// A 1-layer network shell whose FisherState has factor dims (ain, out).
Network shell(std::size_t in_plus_bias, std::size_t out) {
    Layer l;
    l.w = Matrix(out, in_plus_bias);
    l.act = Activation::identity;
    return Network({l}, LossKind::mse);
}

// Capture crafted so the first update_factors call installs exactly the
// requested factors: a single "sample" with sqrt-scaled rows would not give
// arbitrary PSD factors, so install them via eigen square roots instead.
LayerCapture capture_for(const Matrix& a_target, const Matrix& g_target) {
    // Rows of X with (1/B) X^T X == S: take X = sqrt(B) * diag-free symmetric
    // square root of S, using B = dim rows.
    auto root_rows = [](const Matrix& s) {
        const SymEig e = sym_eig(s);
        const std::size_t n = s.rows();
        Matrix x(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                double v = 0.0;
                for (std::size_t r = 0; r < n; ++r) {
                    v += e.q(i, r) * e.q(j, r) * std::sqrt(std::max(0.0, e.d[r]));
                }
                x(i, j) = v * std::sqrt(static_cast<double>(n));
            }
        }
        return x;
    };
    // Pad to a common batch size with zero rows.
    Matrix a = root_rows(a_target);
    Matrix g = root_rows(g_target);
    const std::size_t batch = std::max(a.rows(), g.rows());
    auto pad = [&](Matrix m, double scale) {
        Matrix out(batch, m.cols());
        for (std::size_t i = 0; i < m.rows(); ++i) {
            for (std::size_t j = 0; j < m.cols(); ++j) {
                out(i, j) = m(i, j) * scale;
            }
        }
        return out;
    };
    // (1/batch) X^T X must still equal the target after padding.
    const double a_scale = std::sqrt(static_cast<double>(batch) / static_cast<double>(a.rows()));
    const double g_scale = std::sqrt(static_cast<double>(batch) / static_cast<double>(g.rows()));
    LayerCapture cap;
    cap.a_in.push_back(pad(std::move(a), a_scale));
    cap.g_out.push_back(pad(std::move(g), g_scale));
    return cap;
}

} // namespace

TEST_CASE("update_factors installs the first batch estimate exactly") {
    const Network net = shell(2, 2);
    FisherState st(net);
    LayerCapture cap;
    cap.a_in.push_back(Matrix({{1.0, 2.0}, {3.0, 4.0}}));
    cap.g_out.push_back(Matrix({{0.5, 0.0}, {0.0, 0.25}}));
    st.update_factors(cap, 0.9);
    const Matrix expect_a = crossprod_scaled(cap.a_in[0], 0.5);
    CHECK(st.layer(0).a_factor == expect_a);
    CHECK(st.initialized());
}

TEST_CASE("update_factors applies the 0.9 EMA on later batches") {
    const Network net = shell(2, 1);
    FisherState st(net);
    LayerCapture c1;
    c1.a_in.push_back(Matrix({{1.0, 0.0}, {0.0, 1.0}}));
    c1.g_out.push_back(Matrix({{1.0}, {1.0}}));
    st.update_factors(c1, 0.9);
    const Matrix s1 = st.layer(0).a_factor;

    LayerCapture c2;
    c2.a_in.push_back(Matrix({{2.0, 1.0}, {1.0, 2.0}}));
    c2.g_out.push_back(Matrix({{3.0}, {1.0}}));
    st.update_factors(c2, 0.9);
    const Matrix s2 = crossprod_scaled(c2.a_in[0], 0.5);
    for (std::size_t i = 0; i < s1.size(); ++i) {
        const double expect = 0.9 * s1.data()[i] + 0.1 * s2.data()[i];
        CHECK(testutil::rel_err(st.layer(0).a_factor.data()[i], expect) < 1e-14);
    }
}

TEST_CASE("repeated constant captures converge to the batch estimate") {
    const Network net = shell(2, 1);
    FisherState st(net);
    LayerCapture cap;
    cap.a_in.push_back(Matrix({{1.0, 2.0}, {0.5, 1.0}}));
    cap.g_out.push_back(Matrix({{1.0}, {2.0}}));
    const Matrix target = crossprod_scaled(cap.a_in[0], 0.5);
    for (int i = 0; i < 400; ++i) {
        st.update_factors(cap, 0.9);
    }
    CHECK(rel_frob(st.layer(0).a_factor, target) < 1e-12);
}

TEST_CASE("factors stay exactly symmetric after many updates") {
    SplitMix64 g(3);
    const Network net = shell(4, 3);
    FisherState st(net);
    for (int step = 0; step < 50; ++step) {
        LayerCapture cap;
        cap.a_in.push_back(testutil::random_matrix(g, 6, 4));
        cap.g_out.push_back(testutil::random_matrix(g, 6, 3));
        st.update_factors(cap, 0.9);
        const Matrix& a = st.layer(0).a_factor;
        for (std::size_t i = 0; i < a.rows(); ++i) {
            for (std::size_t j = 0; j < a.cols(); ++j) {
                CHECK(a(i, j) == a(j, i));
            }
        }
    }
}

TEST_CASE("update_factors validates decay and shapes") {
    const Network net = shell(2, 1);
    FisherState st(net);
    LayerCapture cap;
    cap.a_in.push_back(Matrix(2, 3)); // wrong width
    cap.g_out.push_back(Matrix(2, 1));
    CHECK_THROWS_AS(st.update_factors(cap, 0.9), DimensionError);
    LayerCapture ok;
    ok.a_in.push_back(Matrix(2, 2));
    ok.g_out.push_back(Matrix(2, 1));
    CHECK_THROWS_AS(st.update_factors(ok, 1.0), ParameterError);
}

// ----------------------------------------------------------------------------
// precondition_normal
// ----------------------------------------------------------------------------

TEST_CASE("normal damping with identity factors divides by 1 + lambda") {
    const Network net = shell(3, 2);
    FisherState st(net);
    st.update_factors(capture_for(Matrix::identity(3), Matrix::identity(2)), 0.9);
    SplitMix64 g(4);
    const Matrix grad = testutil::random_matrix(g, 2, 3);
    const double lambda = 0.3;
    const Matrix v = st.precondition_normal(0, grad, lambda);
    for (std::size_t i = 0; i < v.size(); ++i) {
        CHECK(testutil::rel_err(v.data()[i], grad.data()[i] / (1.0 + lambda)) < 1e-12);
    }
}

TEST_CASE("normal damping scalar case: diag factors, lambda 0") {
    const Network net = shell(1, 1);
    FisherState st(net);
    st.update_factors(capture_for(Matrix({{4.0}}), Matrix({{1.0}})), 0.9);
    const Matrix v = st.precondition_normal(0, Matrix({{8.0}}), 0.0);
    CHECK(testutil::rel_err(v(0, 0), 2.0) < 1e-12);
}

TEST_CASE("normal damping matches the dense Kronecker inverse oracle") {
    SplitMix64 g(5);
    int cases = 0;
    for (int rep = 0; rep < 60; ++rep) {
        const std::size_t ain = 1 + g.next_below(6); // in+1
        const std::size_t out = 1 + g.next_below(6);
        if (ain * out > 36) {
            continue;
        }
        const Matrix a_t = testutil::random_psd(g, ain, 0.05);
        const Matrix g_t = testutil::random_psd(g, out, 0.05);
        const Network net = shell(ain, out);
        FisherState st(net);
        st.update_factors(capture_for(a_t, g_t), 0.9);
        const Matrix grad = testutil::random_matrix(g, out, ain);
        for (const double lambda : {1e-4, 1e-2, 1.0}) {
            const Matrix v = st.precondition_normal(0, grad, lambda);
            const Matrix oracle = testutil::dense_kron_inverse_apply(
                st.layer(0).a_factor, st.layer(0).g_factor, grad, lambda);
            CHECK(rel_frob(v, oracle) < 1e-8);
        }
        ++cases;
    }
    CHECK(cases >= 30);
}

TEST_CASE("normal damping rejects negative lambda and singular lambda=0") {
    const Network net = shell(2, 1);
    FisherState st(net);
    st.update_factors(capture_for(Matrix({{1.0, 0.0}, {0.0, 0.0}}), Matrix({{1.0}})), 0.9);
    CHECK_THROWS_AS(st.precondition_normal(0, Matrix(1, 2), -0.1), ParameterError);
    CHECK_THROWS_AS(st.precondition_normal(0, Matrix({{1.0, 1.0}}), 0.0), NumericalError);
}

// ----------------------------------------------------------------------------
// precondition_approx
// ----------------------------------------------------------------------------

TEST_CASE("approximated damping with identity factors divides by (1+sqrt(lambda))^2") {
    const Network net = shell(2, 2);
    FisherState st(net);
    st.update_factors(capture_for(Matrix::identity(2), Matrix::identity(2)), 0.9);
    SplitMix64 g(6);
    const Matrix grad = testutil::random_matrix(g, 2, 2);
    const double lambda = 0.09;
    const Matrix v = st.precondition_approx(0, grad, lambda);
    const double denom = (1.0 + std::sqrt(lambda)) * (1.0 + std::sqrt(lambda));
    for (std::size_t i = 0; i < v.size(); ++i) {
        CHECK(testutil::rel_err(v.data()[i], grad.data()[i] / denom) < 1e-12);
    }
}

TEST_CASE("both damping schemes reduce to the exact inverse at lambda 0") {
    SplitMix64 g(7);
    int cases = 0;
    for (int rep = 0; rep < 25; ++rep) {
        const std::size_t ain = 1 + g.next_below(5);
        const std::size_t out = 1 + g.next_below(4);
        const Matrix a_t = testutil::random_psd(g, ain, 0.2);
        const Matrix g_t = testutil::random_psd(g, out, 0.2);
        const Network net = shell(ain, out);
        FisherState st(net);
        st.update_factors(capture_for(a_t, g_t), 0.9);
        const Matrix grad = testutil::random_matrix(g, out, ain);
        const Matrix v_norm = st.precondition_normal(0, grad, 0.0);
        const Matrix v_apex = st.precondition_approx(0, grad, 0.0);
        CHECK(rel_frob(v_apex, v_norm) < 1e-8);
        ++cases;
    }
    CHECK(cases == 25);
}

TEST_CASE("approximated damping hand case") {
    // a = diag(4,1), g = [[1]], lambda = 0.04: shifts are sqrt(lambda) = 0.2,
    // so V = [[8/4.2, 3/1.2]] / 1.2.
    const Network net = shell(2, 1);
    FisherState st(net);
    st.update_factors(capture_for(Matrix({{4.0, 0.0}, {0.0, 1.0}}), Matrix({{1.0}})), 0.9);
    const Matrix v = st.precondition_approx(0, Matrix({{8.0, 3.0}}), 0.04);
    CHECK(testutil::rel_err(v(0, 0), 8.0 / 4.2 / 1.2) < 1e-12);
    CHECK(testutil::rel_err(v(0, 1), 3.0 / 1.2 / 1.2) < 1e-12);
}

TEST_CASE("approximated damping rejects singular factors at lambda 0") {
    const Network net = shell(2, 1);
    FisherState st(net);
    st.update_factors(capture_for(Matrix({{1.0, 0.0}, {0.0, 0.0}}), Matrix({{1.0}})), 0.9);
    CHECK_THROWS_AS(st.precondition_approx(0, Matrix({{1.0, 1.0}}), 0.0), NumericalError);
}

// ----------------------------------------------------------------------------
// Properties
// ----------------------------------------------------------------------------

TEST_CASE("preconditioned update norm is non-increasing in lambda") {
    SplitMix64 g(8);
    for (int rep = 0; rep < 10; ++rep) {
        const std::size_t ain = 2 + g.next_below(4);
        const std::size_t out = 2 + g.next_below(3);
        const Network net = shell(ain, out);
        FisherState st(net);
        st.update_factors(
            capture_for(testutil::random_psd(g, ain, 0.1), testutil::random_psd(g, out, 0.1)), 0.9);
        const Matrix grad = testutil::random_matrix(g, out, ain);
        double prev = std::numeric_limits<double>::infinity();
        for (const double lambda : {1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0}) {
            const double n = frobenius_norm(st.precondition_normal(0, grad, lambda));
            CHECK(n <= prev * (1.0 + 1e-12));
            prev = n;
        }
    }
}

TEST_CASE("eigendecomposition cache honors the inversion period") {
    const Network net = shell(2, 1);
    FisherState st(net, /*t_inv=*/2);
    LayerCapture c1 = capture_for(Matrix({{4.0, 0.0}, {0.0, 4.0}}), Matrix({{1.0}}));
    st.update_factors(c1, 0.9);
    const Matrix grad({{1.0, 1.0}});
    const Matrix v1 = st.precondition_normal(0, grad, 0.0); // computes eigs (a=4I): grad/4
    CHECK(testutil::rel_err(v1(0, 0), 0.25) < 1e-12);

    // One more update: cache still valid (steps_since_inversion = 1 < 2), so
    // the stale eigendecomposition keeps dividing by 4 even though the EMA
    // factor moved.
    LayerCapture c2 = capture_for(Matrix({{16.0, 0.0}, {0.0, 16.0}}), Matrix({{1.0}}));
    st.update_factors(c2, 0.5);
    const Matrix v2 = st.precondition_normal(0, grad, 0.0);
    CHECK(testutil::rel_err(v2(0, 0), 0.25) < 1e-12);

    // Second update invalidates the cache; factor is now 0.5*10+0.5*16 = 13...
    // recomputed from the current EMA value.
    st.update_factors(c2, 0.5);
    const Matrix v3 = st.precondition_normal(0, grad, 0.0);
    const double expect = 1.0 / st.layer(0).a_factor(0, 0);
    CHECK(testutil::rel_err(v3(0, 0), expect) < 1e-12);
}

TEST_CASE("quadratic form matches the damped operator") {
    SplitMix64 g(9);
    const std::size_t ain = 3, out = 2;
    const Network net = shell(ain, out);
    FisherState st(net);
    const Matrix a_t = testutil::random_psd(g, ain, 0.1);
    const Matrix g_t = testutil::random_psd(g, out, 0.1);
    st.update_factors(capture_for(a_t, g_t), 0.9);
    const Matrix v = testutil::random_matrix(g, out, ain);
    const double lambda = 0.05;

    // normal: <v, G v A> + lambda <v, v>
    const Matrix gva = matmul(matmul(st.layer(0).g_factor, v), st.layer(0).a_factor);
    const double expect_norm = frobenius_inner(v, gva) + lambda * frobenius_inner(v, v);
    CHECK(testutil::rel_err(st.quadratic_form(DampingKind::normal, 0, v, lambda), expect_norm) <
          1e-12);

    // approximated: <v, (G+sI) v (A+sI)>
    const double s = std::sqrt(lambda);
    Matrix gs = st.layer(0).g_factor;
    for (std::size_t i = 0; i < out; ++i) {
        gs(i, i) += s;
    }
    Matrix as = st.layer(0).a_factor;
    for (std::size_t i = 0; i < ain; ++i) {
        as(i, i) += s;
    }
    const double expect_apex = frobenius_inner(v, matmul(matmul(gs, v), as));
    CHECK(testutil::rel_err(st.quadratic_form(DampingKind::approximated, 0, v, lambda),
                            expect_apex) < 1e-12);
}

TEST_CASE("spectra dump reports one entry per layer") {
    const Network net(3, {4}, 2, Activation::relu, LossKind::mse, 1);
    FisherState st(net);
    const nlohmann::json j = st.spectra_json();
    REQUIRE(j.size() == 2);
    CHECK(j[0].at("a_eigenvalues").size() == 4);
    CHECK(j[1].at("g_eigenvalues").size() == 2);
}
