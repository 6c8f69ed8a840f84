#pragma once

#include <cstddef>
#include <string>

#include "tdtd/autodiff.hpp"

namespace tdtd {

// Single-layer GRU cell:
//   z = σ(x·Wx_z + bx_z + h·Wh_z + bh_z)
//   r = σ(x·Wx_r + bx_r + h·Wh_r + bh_r)
//   n = tanh(x·Wx_n + bx_n + r ⊙ (h·Wh_n + bh_n))
//   h' = n + z ⊙ (h - n)
// Gate blocks are stored side by side in [in × 3H] / [H × 3H] matrices.
class GruCell {
 public:
  GruCell() = default;

  // Registers `<prefix>.wx`, `.wh`, `.bx`, `.bh` in `store`.
  static void declare(ad::ParamStore& store, const std::string& prefix, std::size_t input_size,
                      std::size_t hidden_size);
  static GruCell bind(ad::ParamStore& store, const std::string& prefix);

  std::size_t input_size() const noexcept { return wx_->rows(); }
  std::size_t hidden_size() const noexcept { return hidden_; }

  ad::Var step(ad::Graph& g, ad::Var h, ad::Var x) const;

 private:
  ad::Tensor* wx_ = nullptr;
  ad::Tensor* wh_ = nullptr;
  ad::Tensor* bx_ = nullptr;
  ad::Tensor* bh_ = nullptr;
  std::size_t hidden_ = 0;
};

}  // namespace tdtd
