#pragma once

#include <cstddef>
#include <vector>

#include "procgt/graphbuild.hpp"

namespace procgt {

// Per-node structural encodings attached to a prefix graph.
struct GraphEncodings {
    std::vector<std::vector<double>> lap_pe;      // node x d_pe
    std::vector<double> lap_eigenvalues;          // d_pe, zero-padded like the vectors
    std::vector<std::vector<double>> rwse;        // node x d_se
};

// Eigenvectors of the symmetric normalized Laplacian of the undirected,
// de-self-looped skeleton. One trivial eigenpair per connected component is
// dropped; the remaining d_pe smallest are kept, columns sign-fixed so the
// first nonzero entry is positive, and zero-padded when fewer remain.
GraphEncodings compute_lap_pe(const PrefixGraph& graph, std::size_t d_pe);

// Return probabilities of s-step random walks on the directed graph with
// self-loops kept, for s = 1..d_se. Rows of sink nodes are all-zero.
std::vector<std::vector<double>> compute_rwse(const PrefixGraph& graph, std::size_t d_se);

GraphEncodings compute_encodings(const PrefixGraph& graph, std::size_t d_pe, std::size_t d_se);

} // namespace procgt
