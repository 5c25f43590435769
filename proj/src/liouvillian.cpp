#include "ssetdyn/liouvillian.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <unsupported/Eigen/KroneckerProduct>

#include "ssetdyn/fingerprint.hpp"

namespace ssetdyn {

namespace {

using Triplet = Eigen::Triplet<Complex, std::ptrdiff_t>;

constexpr Complex kI{0.0, 1.0};

// Ladder coupling of each island charge: 0, c1, 2 c1.
double charge_coupling(const ModelParams& p, int c) { return c * p.c1; }
double charge_energy(const ModelParams& p, int c) { return c == 2 ? p.delta_e : 0.0; }
double charge_decay(const ModelParams& p, int c) { return c == 0 ? 0.0 : p.gamma_qp; }

ChargeBlock block_of(int r, int c) {
  if (r == 0 && c == 0) return ChargeBlock::B00;
  if (r == 1 && c == 1) return ChargeBlock::B11;
  if (r == 2 && c == 2) return ChargeBlock::B22;
  if (r == 0 && c == 2) return ChargeBlock::B02;
  return ChargeBlock::B20;
}

class Builder {
 public:
  Builder(const StateSpace& sp, std::vector<Triplet>& w, std::vector<Triplet>& j)
      : sp_(sp), w_(w), j_(j) {}

  void add(std::ptrdiff_t row, ChargeBlock b, int n, int np, Complex v) {
    if (v == Complex{}) return;
    auto col = sp_.index(b, n, np);
    if (col < 0) return;
    w_.emplace_back(row, col, v);
  }
  void add_jump(std::ptrdiff_t row, ChargeBlock b, int n, int np, double rate, double tilt) {
    if (rate == 0.0) return;
    auto col = sp_.index(b, n, np);
    if (col < 0) return;
    w_.emplace_back(row, col, Complex{rate * tilt, 0.0});
    if (counted_) j_.emplace_back(row, col, Complex{rate, 0.0});
  }
  void set_counted(bool c) { counted_ = c; }

 private:
  const StateSpace& sp_;
  std::vector<Triplet>& w_;
  std::vector<Triplet>& j_;
  bool counted_ = false;
};

}  // namespace

std::string_view to_string(CountingChannel c) {
  return c == CountingChannel::PhotonEmission ? "photon" : "quasiparticle";
}

std::optional<CountingChannel> parse_channel(std::string_view text) {
  if (text == "photon" || text == "PhotonEmission") return CountingChannel::PhotonEmission;
  if (text == "quasiparticle" || text == "QuasiparticleDecay")
    return CountingChannel::QuasiparticleDecay;
  return std::nullopt;
}

SparseSuperoperator::SparseSuperoperator(SparseMatrix w, SparseMatrix jumps, StateSpace space,
                                         ModelParams params, double s, CountingChannel channel)
    : w_(std::move(w)),
      jumps_(std::move(jumps)),
      space_(std::move(space)),
      params_(params),
      s_(s),
      channel_(channel) {
  Fnv1a h;
  h.add(hex_digest(fingerprint(params_)));
  h.add(hex_digest(space_.fingerprint()));
  h.add(s_);
  h.add(to_string(channel_));
  hash_ = h.value();
}

void SparseSuperoperator::apply(std::span<const Complex> in, std::span<Complex> out) const {
  if (in.size() != dim() || out.size() != dim())
    throw std::invalid_argument("SparseSuperoperator::apply: dimension mismatch");
  const auto* outer = w_.outerIndexPtr();
  const auto* inner = w_.innerIndexPtr();
  const auto* vals = w_.valuePtr();
  for (std::ptrdiff_t r = 0; r < w_.rows(); ++r) {
    Complex acc{};
    for (auto k = outer[r]; k < outer[r + 1]; ++k) acc += vals[k] * in[inner[k]];
    out[r] = acc;
  }
}

Eigen::VectorXcd SparseSuperoperator::apply(const Eigen::VectorXcd& in) const {
  Eigen::VectorXcd out(in.size());
  apply(std::span<const Complex>(in.data(), in.size()), std::span<Complex>(out.data(), out.size()));
  return out;
}

SparseSuperoperator assemble(const ModelParams& p, const StateSpace& sp, double s,
                             CountingChannel channel) {
  if (!(std::abs(s) <= kMaxCountingField))
    throw ParameterError("counting field |s| must not exceed " + std::to_string(kMaxCountingField));

  const double tilt = std::exp(-s);
  const double photon_tilt = channel == CountingChannel::PhotonEmission ? tilt : 1.0;
  const double qp_tilt = channel == CountingChannel::QuasiparticleDecay ? tilt : 1.0;
  const double half_ej = 0.5 * p.e_j;

  std::vector<Triplet> w;
  std::vector<Triplet> j;
  w.reserve(sp.dim() * 12);
  Builder b(sp, w, j);

  for (std::size_t pi = 0; pi < sp.pair_count(); ++pi) {
    const auto [n, np] = sp.pair(pi);
    const double sn = std::sqrt(double(n)), sn1 = std::sqrt(double(n + 1));
    const double snp = std::sqrt(double(np)), snp1 = std::sqrt(double(np + 1));
    for (ChargeBlock blk : kChargeBlocks) {
      const int ci = row_charge(blk), cj = col_charge(blk);
      const auto row = static_cast<std::ptrdiff_t>(pi) * kBlockCount + static_cast<int>(blk);

      const double detuning =
          p.omega * (n - np) + charge_energy(p, ci) - charge_energy(p, cj);
      const double decay = 0.5 * (charge_decay(p, ci) + charge_decay(p, cj)) +
                           0.5 * p.gamma_ext * (n + np);
      b.add(row, blk, n, np, Complex{-decay, -detuning});

      const double ki = charge_coupling(p, ci), kj = charge_coupling(p, cj);
      b.add(row, blk, n - 1, np, -kI * ki * sn);
      b.add(row, blk, n + 1, np, -kI * ki * sn1);
      b.add(row, blk, n, np - 1, kI * kj * snp);
      b.add(row, blk, n, np + 1, kI * kj * snp1);

      switch (blk) {
        case ChargeBlock::B00:
          b.add(row, ChargeBlock::B20, n, np, kI * half_ej);
          b.add(row, ChargeBlock::B02, n, np, -kI * half_ej);
          break;
        case ChargeBlock::B22:
          b.add(row, ChargeBlock::B02, n, np, kI * half_ej);
          b.add(row, ChargeBlock::B20, n, np, -kI * half_ej);
          break;
        case ChargeBlock::B02:
          b.add(row, ChargeBlock::B22, n, np, kI * half_ej);
          b.add(row, ChargeBlock::B00, n, np, -kI * half_ej);
          break;
        case ChargeBlock::B20:
          b.add(row, ChargeBlock::B00, n, np, kI * half_ej);
          b.add(row, ChargeBlock::B22, n, np, -kI * half_ej);
          break;
        case ChargeBlock::B11:
          break;
      }

      b.set_counted(channel == CountingChannel::QuasiparticleDecay);
      if (blk == ChargeBlock::B11) b.add_jump(row, ChargeBlock::B22, n, np, p.gamma_qp, qp_tilt);
      if (blk == ChargeBlock::B00) b.add_jump(row, ChargeBlock::B11, n, np, p.gamma_qp, qp_tilt);

      b.set_counted(channel == CountingChannel::PhotonEmission);
      b.add_jump(row, blk, n + 1, np + 1, p.gamma_ext * sn1 * snp1, photon_tilt);
    }
  }

  const auto d = static_cast<std::ptrdiff_t>(sp.dim());
  SparseMatrix wm(d, d), jm(d, d);
  wm.setFromTriplets(w.begin(), w.end());
  jm.setFromTriplets(j.begin(), j.end());
  wm.makeCompressed();
  jm.makeCompressed();
  return SparseSuperoperator(std::move(wm), std::move(jm), sp, p, s, channel);
}

SystemOperators system_operators(const ModelParams& p, int n_max) {
  const int nf = n_max + 1;
  const int d = 3 * nf;
  auto idx = [nf](int c, int n) { return c * nf + n; };

  SystemOperators ops;
  ops.hamiltonian = Eigen::MatrixXcd::Zero(d, d);
  ops.photon_loss = Eigen::MatrixXcd::Zero(d, d);
  ops.qp21 = Eigen::MatrixXcd::Zero(d, d);
  ops.qp10 = Eigen::MatrixXcd::Zero(d, d);
  auto& h = ops.hamiltonian;
  for (int c = 0; c < 3; ++c) {
    const double k = charge_coupling(p, c);
    for (int n = 0; n < nf; ++n) {
      h(idx(c, n), idx(c, n)) = p.omega * n + charge_energy(p, c);
      if (n + 1 < nf) {
        const double amp = k * std::sqrt(double(n + 1));
        h(idx(c, n), idx(c, n + 1)) = amp;
        h(idx(c, n + 1), idx(c, n)) = amp;
        ops.photon_loss(idx(c, n), idx(c, n + 1)) = std::sqrt(p.gamma_ext * (n + 1));
      }
    }
  }
  for (int n = 0; n < nf; ++n) {
    h(idx(0, n), idx(2, n)) = -0.5 * p.e_j;
    h(idx(2, n), idx(0, n)) = -0.5 * p.e_j;
    ops.qp21(idx(1, n), idx(2, n)) = std::sqrt(p.gamma_qp);
    ops.qp10(idx(0, n), idx(1, n)) = std::sqrt(p.gamma_qp);
  }
  return ops;
}

std::size_t dense_index(int n_max, int c, int n, int cp, int np) {
  const std::size_t nf = static_cast<std::size_t>(n_max) + 1;
  const std::size_t d = 3 * nf;
  return (cp * nf + np) * d + c * nf + n;
}

Eigen::MatrixXcd assemble_dense_reference(const ModelParams& p, int n_max, double s,
                                          CountingChannel channel) {
  if (n_max < 1 || n_max > kDenseReferenceMaxN)
    throw ParameterError("dense reference requires 1 <= n_max <= " +
                         std::to_string(kDenseReferenceMaxN));
  if (!(std::abs(s) <= kMaxCountingField)) throw ParameterError("counting field out of range");

  const auto ops = system_operators(p, n_max);
  const auto d = ops.hamiltonian.rows();
  const Eigen::MatrixXcd id = Eigen::MatrixXcd::Identity(d, d);
  const double tilt = std::exp(-s);

  Eigen::MatrixXcd w = -kI * (Eigen::kroneckerProduct(id, ops.hamiltonian).eval() -
                              Eigen::kroneckerProduct(ops.hamiltonian.transpose(), id).eval());
  auto dissipate = [&](const Eigen::MatrixXcd& l, double q) {
    const Eigen::MatrixXcd ll = l.adjoint() * l;
    w += q * Eigen::kroneckerProduct(l.conjugate(), l).eval();
    w -= 0.5 * Eigen::kroneckerProduct(id, ll).eval();
    w -= 0.5 * Eigen::kroneckerProduct(ll.transpose(), id).eval();
  };
  const bool photon = channel == CountingChannel::PhotonEmission;
  dissipate(ops.photon_loss, photon ? tilt : 1.0);
  dissipate(ops.qp21, photon ? 1.0 : tilt);
  dissipate(ops.qp10, photon ? 1.0 : tilt);
  return w;
}

Eigen::VectorXcd embed_dense(const StateSpace& sp, const Eigen::VectorXcd& banded) {
  const int nm = sp.n_max();
  const std::size_t d = 3 * static_cast<std::size_t>(nm + 1);
  Eigen::VectorXcd out = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(d * d));
  for (std::size_t i = 0; i < sp.dim(); ++i) {
    const auto e = sp.entry(i);
    out(dense_index(nm, row_charge(e.block), e.n, col_charge(e.block), e.np)) = banded(i);
  }
  return out;
}

Complex trace(const StateSpace& sp, std::span<const Complex> rho) {
  if (rho.size() != sp.dim()) throw std::invalid_argument("trace: dimension mismatch");
  Complex t{};
  for (int n = 0; n <= sp.n_max(); ++n) {
    const auto base = sp.pair_index(n, n) * kBlockCount;
    t += rho[base + 0] + rho[base + 1] + rho[base + 2];
  }
  return t;
}

Eigen::VectorXcd trace_functional(const StateSpace& sp) {
  Eigen::VectorXcd u = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(sp.dim()));
  for (int n = 0; n <= sp.n_max(); ++n) {
    const auto base = sp.pair_index(n, n) * kBlockCount;
    u(base) = u(base + 1) = u(base + 2) = 1.0;
  }
  return u;
}

Eigen::VectorXcd hermitian_conjugate(const StateSpace& sp, const Eigen::VectorXcd& rho) {
  if (static_cast<std::size_t>(rho.size()) != sp.dim())
    throw std::invalid_argument("hermitian_conjugate: dimension mismatch");
  Eigen::VectorXcd out(rho.size());
  for (std::size_t i = 0; i < sp.dim(); ++i) {
    const auto e = sp.entry(i);
    const auto mirror = block_of(col_charge(e.block), row_charge(e.block));
    out(sp.index(mirror, e.np, e.n)) = std::conj(rho(static_cast<Eigen::Index>(i)));
  }
  return out;
}

}  // namespace ssetdyn
