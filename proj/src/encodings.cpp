#include "procgt/encodings.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <Eigen/Dense>

#include "procgt/errors.hpp"

namespace procgt {

namespace {

// Union-find over node indices, used to count connected components of the
// undirected skeleton.
struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(std::size_t n) : parent(n) {
        for (std::size_t i = 0; i < n; ++i) parent[i] = static_cast<int>(i);
    }
    int find(int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    }
    void unite(int a, int b) { parent[find(a)] = find(b); }
};

constexpr double kTrivialEigenTol = 1e-9;

} // namespace

GraphEncodings compute_lap_pe(const PrefixGraph& graph, std::size_t d_pe) {
    const std::size_t n = graph.node_count();
    GraphEncodings enc;
    enc.lap_pe.assign(n, std::vector<double>(d_pe, 0.0));
    enc.lap_eigenvalues.assign(d_pe, 0.0);
    if (n == 0 || d_pe == 0) return enc;

    Eigen::MatrixXd adj = Eigen::MatrixXd::Zero(n, n);
    UnionFind uf(n);
    for (const auto& [s, t] : graph.edges) {
        if (s == t) continue;
        adj(s, t) = 1.0;
        adj(t, s) = 1.0;
        uf.unite(s, t);
    }
    std::set<int> roots;
    for (std::size_t i = 0; i < n; ++i) roots.insert(uf.find(static_cast<int>(i)));
    const std::size_t components = roots.size();

    Eigen::VectorXd deg = adj.rowwise().sum();
    Eigen::VectorXd dinv_sqrt(n);
    for (std::size_t i = 0; i < n; ++i)
        dinv_sqrt(i) = deg(i) > 0.0 ? 1.0 / std::sqrt(deg(i)) : 0.0;

    // L = D^{-1/2} (D - A) D^{-1/2}; isolated nodes get a zero diagonal so
    // their trivial eigenvalue stays 0 and is dropped with its component.
    Eigen::MatrixXd lap = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j)
                lap(i, j) = deg(i) > 0.0 ? 1.0 : 0.0;
            else
                lap(i, j) = -adj(i, j) * dinv_sqrt(i) * dinv_sqrt(j);
        }

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(lap);
    if (solver.info() != Eigen::Success)
        throw Error(ErrorKind::NonFiniteOutput, "Laplacian eigendecomposition failed");

    const Eigen::VectorXd& evals = solver.eigenvalues();   // ascending
    const Eigen::MatrixXd& evecs = solver.eigenvectors();

    std::size_t kept = 0;
    for (std::size_t idx = components; idx < n && kept < d_pe; ++idx, ++kept) {
        double ev = evals(static_cast<int>(idx));
        if (ev < kTrivialEigenTol) ev = std::abs(ev);
        Eigen::VectorXd col = evecs.col(static_cast<int>(idx));
        for (std::size_t i = 0; i < n; ++i) {
            if (std::abs(col(i)) > kTrivialEigenTol) {
                if (col(i) < 0.0) col = -col;
                break;
            }
        }
        enc.lap_eigenvalues[kept] = ev;
        for (std::size_t i = 0; i < n; ++i) enc.lap_pe[i][kept] = col(i);
    }
    return enc;
}

std::vector<std::vector<double>> compute_rwse(const PrefixGraph& graph, std::size_t d_se) {
    const std::size_t n = graph.node_count();
    std::vector<std::vector<double>> rwse(n, std::vector<double>(d_se, 0.0));
    if (n == 0 || d_se == 0) return rwse;

    // Row-stochastic transition matrix over the directed structure, self-loops
    // kept; rows of sinks stay all-zero (the walk dies there).
    Eigen::MatrixXd adj = Eigen::MatrixXd::Zero(n, n);
    for (const auto& [s, t] : graph.edges) adj(s, t) = 1.0;
    Eigen::MatrixXd trans = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        const double out = adj.row(i).sum();
        if (out > 0.0) trans.row(i) = adj.row(i) / out;
    }

    Eigen::MatrixXd power = trans;
    for (std::size_t s = 0; s < d_se; ++s) {
        for (std::size_t i = 0; i < n; ++i) rwse[i][s] = power(i, i);
        if (s + 1 < d_se) power = power * trans;
    }
    return rwse;
}

GraphEncodings compute_encodings(const PrefixGraph& graph, std::size_t d_pe, std::size_t d_se) {
    GraphEncodings enc = compute_lap_pe(graph, d_pe);
    enc.rwse = compute_rwse(graph, d_se);
    return enc;
}

} // namespace procgt
