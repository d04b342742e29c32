#pragma once

#include <cmath>
#include <vector>

#include "grf/tensor.hpp"

namespace grf {

// Least-squares linear probe: fit w on frozen embeddings against sign
// targets, report accuracy on a held-out set. Used as the quantitative
// stand-in for "the classes separate at this stage".
template <typename S>
struct LinearProbe {
    std::vector<double> w;  // last entry is the bias

    // X [N, d], y [N] with sign(y) as the class. Ridge-regularized normal
    // equations keep the solve well-posed for collinear embeddings.
    static LinearProbe fit(const Tensor<S>& X, const Tensor<S>& y, double ridge = 1e-6) {
        if (X.rank() != 2 || y.rank() != 1 || X.dim(0) != y.dim(0))
            throw DimError("probe fit: need X [N, d] and y [N], got " + format_shape(X.shape()) +
                           " and " + format_shape(y.shape()));
        const int N = X.dim(0), d = X.dim(1), m = d + 1;
        std::vector<double> A(static_cast<size_t>(m) * m, 0.0), b(static_cast<size_t>(m), 0.0);
        for (int i = 0; i < N; ++i) {
            std::vector<double> row(static_cast<size_t>(m), 1.0);
            for (int j = 0; j < d; ++j) row[static_cast<size_t>(j)] = double(X.at({i, j}));
            const double target = y[i] > S(0) ? 1.0 : -1.0;
            for (int r = 0; r < m; ++r) {
                for (int c = 0; c < m; ++c)
                    A[static_cast<size_t>(r) * m + c] += row[static_cast<size_t>(r)] *
                                                         row[static_cast<size_t>(c)];
                b[static_cast<size_t>(r)] += row[static_cast<size_t>(r)] * target;
            }
        }
        for (int r = 0; r < m; ++r) A[static_cast<size_t>(r) * m + r] += ridge;

        // Gaussian elimination with partial pivoting
        std::vector<int> perm(static_cast<size_t>(m));
        for (int i = 0; i < m; ++i) perm[static_cast<size_t>(i)] = i;
        for (int col = 0; col < m; ++col) {
            int pivot = col;
            for (int r = col + 1; r < m; ++r)
                if (std::abs(A[static_cast<size_t>(r) * m + col]) >
                    std::abs(A[static_cast<size_t>(pivot) * m + col]))
                    pivot = r;
            if (pivot != col) {
                for (int c = 0; c < m; ++c)
                    std::swap(A[static_cast<size_t>(col) * m + c],
                              A[static_cast<size_t>(pivot) * m + c]);
                std::swap(b[static_cast<size_t>(col)], b[static_cast<size_t>(pivot)]);
            }
            const double diag = A[static_cast<size_t>(col) * m + col];
            for (int r = col + 1; r < m; ++r) {
                const double f = A[static_cast<size_t>(r) * m + col] / diag;
                if (f == 0.0) continue;
                for (int c = col; c < m; ++c)
                    A[static_cast<size_t>(r) * m + c] -= f * A[static_cast<size_t>(col) * m + c];
                b[static_cast<size_t>(r)] -= f * b[static_cast<size_t>(col)];
            }
        }
        LinearProbe probe;
        probe.w.assign(static_cast<size_t>(m), 0.0);
        for (int r = m - 1; r >= 0; --r) {
            double acc = b[static_cast<size_t>(r)];
            for (int c = r + 1; c < m; ++c)
                acc -= A[static_cast<size_t>(r) * m + c] * probe.w[static_cast<size_t>(c)];
            probe.w[static_cast<size_t>(r)] = acc / A[static_cast<size_t>(r) * m + r];
        }
        return probe;
    }

    double accuracy(const Tensor<S>& X, const Tensor<S>& y) const {
        if (X.rank() != 2 || X.dim(1) + 1 != static_cast<int>(w.size()))
            throw DimError("probe accuracy: embedding width mismatch");
        const int N = X.dim(0);
        int correct = 0;
        for (int i = 0; i < N; ++i) {
            double score = w.back();
            for (int j = 0; j < X.dim(1); ++j) score += w[static_cast<size_t>(j)] * double(X.at({i, j}));
            const bool truth = y[i] > S(0);
            if ((score > 0.0) == truth) ++correct;
        }
        return double(correct) / double(N);
    }
};

}  // namespace grf
