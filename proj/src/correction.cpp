#include "forgeloc/correction.hpp"

namespace forgeloc {

template <class T>
const Tensor<T>& BranchOutputs<T>::branch(int i) const {
  if (!has(i)) throw ConfigError("branch C" + std::to_string(i) + " is not available");
  return logits[i - kFirstBranch];
}

namespace {

template <class T>
void check_fuse_shapes(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 4 || b.ndim() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != 2 * b.dim(2) ||
      a.dim(3) != 2 * b.dim(3)) {
    throw DimensionError("fuse: high-level map " + shape_str(b.shape()) +
                         " must be exactly half the size of " + shape_str(a.shape()));
  }
}

}  // namespace

template <class T>
Tensor<T> fuse_multiply(const Tensor<T>& a_low, const Tensor<T>& b_high, const Conv2d<T>& gate) {
  check_fuse_shapes(a_low, b_high);
  return mul(a_low, sigmoid(nearest_upsample(gate(b_high), 2)));
}

template <class T>
Tensor<T> fuse_add(const Tensor<T>& a_low, const Tensor<T>& b_high, const Conv2d<T>& proj) {
  check_fuse_shapes(a_low, b_high);
  return add(a_low, nearest_upsample(proj(b_high), 2));
}

template <class T>
DenseCorrection<T>::DenseCorrection(ParameterStore<T>& store, const Initializer& init,
                                    const std::string& prefix, int64_t d_model, FusionMode mode)
    : mode_(mode) {
  for (int i = kFirstBranch; i < kLastBranch; ++i) {
    gates_[i - kFirstBranch] = Conv2d<T>(store, init, prefix + ".gate" + std::to_string(i),
                                         d_model, d_model, 1, 1, 0, true);
  }
  for (int i = kFirstBranch; i <= kLastBranch; ++i) {
    heads_[i - kFirstBranch] = Conv2d<T>(store, init, prefix + ".head" + std::to_string(i),
                                         d_model, 1, 3, 1, 1, true);
  }
}

template <class T>
BranchOutputs<T> DenseCorrection<T>::forward(const std::array<Tensor<T>, 4>& encoded,
                                             int lowest_branch) const {
  if (lowest_branch < kFirstBranch || lowest_branch > kLastBranch) {
    throw ConfigError("output branch must be in 2..5, got " + std::to_string(lowest_branch));
  }
  BranchOutputs<T> out;
  out.lowest_branch = lowest_branch;
  Tensor<T> higher;
  for (int i = kLastBranch; i >= lowest_branch; --i) {
    const Tensor<T>& e = encoded[i - kFirstBranch];
    if (!e.defined()) throw ConfigError("missing encoded features for C" + std::to_string(i));
    Tensor<T> f;
    if (i == kLastBranch) {
      f = e;
    } else if (mode_ == FusionMode::kMultiply) {
      f = fuse_multiply(e, higher, gates_[i - kFirstBranch]);
    } else {
      f = fuse_add(e, higher, gates_[i - kFirstBranch]);
    }
    out.logits[i - kFirstBranch] = heads_[i - kFirstBranch](f);
    higher = f;
  }
  return out;
}

#define FORGELOC_INSTANTIATE_CORR(T)                                                      \
  template struct BranchOutputs<T>;                                                       \
  template Tensor<T> fuse_multiply(const Tensor<T>&, const Tensor<T>&, const Conv2d<T>&); \
  template Tensor<T> fuse_add(const Tensor<T>&, const Tensor<T>&, const Conv2d<T>&);      \
  template class DenseCorrection<T>;

FORGELOC_INSTANTIATE_CORR(float)
FORGELOC_INSTANTIATE_CORR(double)

}  // namespace forgeloc
