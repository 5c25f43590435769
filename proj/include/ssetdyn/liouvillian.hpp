#pragma once

#include <complex>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "ssetdyn/model.hpp"

namespace ssetdyn {

using Complex = std::complex<double>;
using SparseMatrix = Eigen::SparseMatrix<Complex, Eigen::RowMajor, std::ptrdiff_t>;

enum class CountingChannel { PhotonEmission, QuasiparticleDecay };

std::string_view to_string(CountingChannel c);
std::optional<CountingChannel> parse_channel(std::string_view text);

inline constexpr double kMaxCountingField = 5.0;

// Tilted generator W_s on the banded five-block space. Also keeps the
// untilted counted-jump superoperator J, so dW/ds = -exp(-s) J.
class SparseSuperoperator {
 public:
  SparseSuperoperator(SparseMatrix w, SparseMatrix jumps, StateSpace space, ModelParams params,
                      double s, CountingChannel channel);

  std::size_t dim() const { return static_cast<std::size_t>(w_.rows()); }
  const SparseMatrix& matrix() const { return w_; }
  const SparseMatrix& counted_jumps() const { return jumps_; }
  const StateSpace& space() const { return space_; }
  const ModelParams& params() const { return params_; }
  double s() const { return s_; }
  CountingChannel channel() const { return channel_; }
  std::uint64_t params_hash() const { return hash_; }

  // out = W_s in. Throws std::invalid_argument on length mismatch.
  void apply(std::span<const Complex> in, std::span<Complex> out) const;
  Eigen::VectorXcd apply(const Eigen::VectorXcd& in) const;

 private:
  SparseMatrix w_;
  SparseMatrix jumps_;
  StateSpace space_;
  ModelParams params_;
  double s_;
  CountingChannel channel_;
  std::uint64_t hash_;
};

// Throws ParameterError when |s| exceeds kMaxCountingField.
SparseSuperoperator assemble(const ModelParams& params, const StateSpace& space, double s,
                             CountingChannel channel);

inline constexpr int kDenseReferenceMaxN = 12;

// Full nine-block, unbanded generator on column-stacked vec(rho) of the
// 3(n_max+1) dimensional Hilbert space. Index of |c,n> is c*(n_max+1)+n.
Eigen::MatrixXcd assemble_dense_reference(const ModelParams& params, int n_max, double s,
                                          CountingChannel channel);

// Position of rho(c n, c' n') in the dense vec layout.
std::size_t dense_index(int n_max, int c, int n, int cp, int np);

// Embeds a banded vector into the dense layout (missing blocks are zero).
Eigen::VectorXcd embed_dense(const StateSpace& space, const Eigen::VectorXcd& banded);

// Tr(rho) = sum of diagonal Fock entries of blocks 00, 11, 22.
Complex trace(const StateSpace& space, std::span<const Complex> rho);

// Vector representing the identity operator; W_0^dagger annihilates it.
Eigen::VectorXcd trace_functional(const StateSpace& space);

// rho -> rho^dagger in the banded layout.
Eigen::VectorXcd hermitian_conjugate(const StateSpace& space, const Eigen::VectorXcd& rho);

// Dense Hamiltonian and jump operators on the 3(n_max+1) Hilbert space.
struct SystemOperators {
  Eigen::MatrixXcd hamiltonian;
  Eigen::MatrixXcd photon_loss;  // sqrt(gamma_ext) a
  Eigen::MatrixXcd qp21;         // sqrt(Gamma) |1><2|
  Eigen::MatrixXcd qp10;         // sqrt(Gamma) |0><1|
};
SystemOperators system_operators(const ModelParams& params, int n_max);

}  // namespace ssetdyn
