#include "tdtd/gru.hpp"

#include "tdtd/error.hpp"

namespace tdtd {

void GruCell::declare(ad::ParamStore& store, const std::string& prefix, std::size_t input_size,
                      std::size_t hidden_size) {
  store.add(prefix + ".wx", {input_size, 3 * hidden_size});
  store.add(prefix + ".wh", {hidden_size, 3 * hidden_size});
  store.add(prefix + ".bx", {3 * hidden_size});
  store.add(prefix + ".bh", {3 * hidden_size});
}

GruCell GruCell::bind(ad::ParamStore& store, const std::string& prefix) {
  GruCell cell;
  cell.wx_ = &store.at(prefix + ".wx");
  cell.wh_ = &store.at(prefix + ".wh");
  cell.bx_ = &store.at(prefix + ".bx");
  cell.bh_ = &store.at(prefix + ".bh");
  cell.hidden_ = cell.wh_->rows();
  if (cell.wh_->cols() != 3 * cell.hidden_ || cell.wx_->cols() != 3 * cell.hidden_ ||
      cell.bx_->size() != 3 * cell.hidden_ || cell.bh_->size() != 3 * cell.hidden_) {
    throw DimensionError("gru '" + prefix + "': inconsistent parameter shapes");
  }
  return cell;
}

ad::Var GruCell::step(ad::Graph& g, ad::Var h, ad::Var x) const {
  const std::size_t n = hidden_;
  const ad::Var gx = g.affine(x, g.param(*wx_), g.param(*bx_));
  const ad::Var gh = g.affine(h, g.param(*wh_), g.param(*bh_));
  const ad::Var z = g.sigmoid(g.add(g.slice(gx, 0, n), g.slice(gh, 0, n)));
  const ad::Var r = g.sigmoid(g.add(g.slice(gx, n, n), g.slice(gh, n, n)));
  const ad::Var cand = g.tanh(g.add(g.slice(gx, 2 * n, n), g.mul(r, g.slice(gh, 2 * n, n))));
  return g.add(cand, g.mul(z, g.sub(h, cand)));
}

}  // namespace tdtd
