#include "ssetdyn/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ssetdyn/fingerprint.hpp"

namespace ssetdyn {

double coupling_element(double lambda, double omega) {
  return lambda * std::sqrt(std::numbers::pi * omega);
}

ModelParams reduce(const PaperParams& raw) {
  if (!(raw.omega_ratio > 0.0)) throw ParameterError("omega_ratio must be positive");
  if (!(raw.gamma_ext_ratio > 0.0)) throw ParameterError("gamma_ext_ratio must be positive");
  if (!(raw.lambda >= 0.0)) throw ParameterError("lambda must be non-negative");
  if (!(raw.lambda < 0.5)) throw ParameterError("lambda must stay below 0.5 (weak coupling)");
  if (!std::isfinite(raw.ej_ratio) || !std::isfinite(raw.de_ratio))
    throw ParameterError("energies must be finite");

  ModelParams p;
  p.e_j = kBiasEnergy * raw.ej_ratio;
  p.delta_e = kBiasEnergy * raw.de_ratio;
  p.omega = raw.omega_ratio;
  p.gamma_ext = raw.gamma_ext_ratio;
  p.lambda = raw.lambda;
  p.c1 = coupling_element(raw.lambda, raw.omega_ratio);
  p.gamma_qp = 1.0;
  return p;
}

const char* block_name(ChargeBlock b) {
  switch (b) {
    case ChargeBlock::B00: return "00";
    case ChargeBlock::B11: return "11";
    case ChargeBlock::B22: return "22";
    case ChargeBlock::B02: return "02";
    case ChargeBlock::B20: return "20";
  }
  return "??";
}

std::size_t StateSpace::banded_pair_count(int n_max, int m_max) {
  auto n1 = static_cast<std::size_t>(n_max + 1);
  auto m = static_cast<std::size_t>(m_max);
  return n1 * (2 * m + 1) - m * (m + 1);
}

StateSpace StateSpace::build(int n_max, int m_max) {
  if (n_max < 1) throw ParameterError("n_max must be at least 1");
  if (m_max < 0) throw ParameterError("m_max must be non-negative");
  if (m_max > n_max) throw ParameterError("m_max must not exceed n_max");

  StateSpace sp;
  sp.n_max_ = n_max;
  sp.m_max_ = m_max;
  sp.row_start_.resize(static_cast<std::size_t>(n_max) + 2);
  sp.pairs_.reserve(banded_pair_count(n_max, m_max));
  for (int n = 0; n <= n_max; ++n) {
    sp.row_start_[n] = sp.pairs_.size();
    int lo = std::max(0, n - m_max);
    int hi = std::min(n_max, n + m_max);
    for (int np = lo; np <= hi; ++np) sp.pairs_.emplace_back(n, np);
  }
  sp.row_start_[n_max + 1] = sp.pairs_.size();
  return sp;
}

bool StateSpace::in_band(int n, int np) const {
  return n >= 0 && np >= 0 && n <= n_max_ && np <= n_max_ && std::abs(n - np) <= m_max_;
}

std::ptrdiff_t StateSpace::pair_index(int n, int np) const {
  if (!in_band(n, np)) return -1;
  return static_cast<std::ptrdiff_t>(row_start_[n] + (np - std::max(0, n - m_max_)));
}

std::ptrdiff_t StateSpace::index(ChargeBlock b, int n, int np) const {
  auto p = pair_index(n, np);
  if (p < 0) return -1;
  return p * kBlockCount + static_cast<int>(b);
}

BasisEntry StateSpace::entry(std::size_t flat) const {
  if (flat >= dim()) throw std::out_of_range("StateSpace::entry: index out of range");
  const auto& pr = pairs_[flat / kBlockCount];
  return {static_cast<ChargeBlock>(flat % kBlockCount), pr.first, pr.second};
}

std::uint64_t StateSpace::fingerprint() const {
  Fnv1a h;
  h.add("space;");
  h.add(static_cast<std::int64_t>(n_max_));
  h.add(static_cast<std::int64_t>(m_max_));
  return h.value();
}

std::uint64_t fingerprint(const ModelParams& p) {
  Fnv1a h;
  h.add("params;");
  for (double v : {p.e_j, p.delta_e, p.omega, p.gamma_ext, p.c1, p.lambda, p.gamma_qp}) h.add(v);
  return h.value();
}

}  // namespace ssetdyn
