#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ssetdyn {

// Bias energy eV_ds expressed in units of hbar*Gamma.
inline constexpr double kBiasEnergy = 6.283185307179586476925286766559;

class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Parameters as they appear in figure captions: energies are fractions of
// eV_ds, rates are fractions of the quasiparticle rate Gamma.
struct PaperParams {
  double ej_ratio = 1.0 / 16.0;
  double de_ratio = -0.1;
  double omega_ratio = 1.0;
  double gamma_ext_ratio = 0.0005;
  double lambda = 0.0;
};

// Reduced units: hbar = 1, Gamma = 1.
struct ModelParams {
  double e_j = 0.0;
  double delta_e = 0.0;
  double omega = 1.0;
  double gamma_ext = 0.0;
  double c1 = 0.0;  // single-charge coupling C*x_s
  double lambda = 0.0;
  double gamma_qp = 1.0;
};

// Converts caption units to reduced units. Throws ParameterError.
ModelParams reduce(const PaperParams& raw);

// c1 from lambda and omega (reduced units).
double coupling_element(double lambda, double omega);

enum class ChargeBlock : std::uint8_t { B00 = 0, B11 = 1, B22 = 2, B02 = 3, B20 = 4 };

inline constexpr int kBlockCount = 5;

inline constexpr std::array<ChargeBlock, kBlockCount> kChargeBlocks = {
    ChargeBlock::B00, ChargeBlock::B11, ChargeBlock::B22, ChargeBlock::B02, ChargeBlock::B20};

// Island charge labelling the row (ket) and column (bra) of a block.
constexpr int row_charge(ChargeBlock b) {
  constexpr int r[] = {0, 1, 2, 0, 2};
  return r[static_cast<int>(b)];
}
constexpr int col_charge(ChargeBlock b) {
  constexpr int c[] = {0, 1, 2, 2, 0};
  return c[static_cast<int>(b)];
}
const char* block_name(ChargeBlock b);

struct BasisEntry {
  ChargeBlock block;
  int n;
  int np;
};

// Banded five-block basis. Flat index = pair_index * 5 + block, so the five
// charge blocks of one Fock pair are adjacent.
class StateSpace {
 public:
  // Throws ParameterError for n_max < 1, m_max < 0 or m_max > n_max.
  static StateSpace build(int n_max, int m_max);

  int n_max() const { return n_max_; }
  int m_max() const { return m_max_; }
  std::size_t dim() const { return pairs_.size() * kBlockCount; }
  std::size_t pair_count() const { return pairs_.size(); }

  bool in_band(int n, int np) const;
  // -1 when (n, np) lies outside the band or the Fock range.
  std::ptrdiff_t pair_index(int n, int np) const;
  std::ptrdiff_t index(ChargeBlock b, int n, int np) const;
  BasisEntry entry(std::size_t flat) const;
  const std::pair<int, int>& pair(std::size_t p) const { return pairs_[p]; }

  std::uint64_t fingerprint() const;

  // Closed-form pair count (n_max+1)(2m+1) - m(m+1).
  static std::size_t banded_pair_count(int n_max, int m_max);

 private:
  StateSpace() = default;
  int n_max_ = 0;
  int m_max_ = 0;
  std::vector<std::size_t> row_start_;
  std::vector<std::pair<int, int>> pairs_;
};

std::uint64_t fingerprint(const ModelParams& p);

}  // namespace ssetdyn
