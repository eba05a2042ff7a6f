// SPDX-License-Identifier: Apache-2.0
#include "phead/params.hpp"

namespace phead {

std::size_t ParamLayout::add(std::string name, std::size_t rows, std::size_t cols) {
  tensors_.push_back({std::move(name), rows, cols, total_});
  total_ += rows * cols;
  return tensors_.size() - 1;
}

std::size_t ParamLayout::find(std::string_view name) const noexcept {
  for (std::size_t i = 0; i < tensors_.size(); ++i)
    if (tensors_[i].name == name) return i;
  return tensors_.size();
}

bool operator==(const ParamLayout& a, const ParamLayout& b) {
  if (a.tensors_.size() != b.tensors_.size()) return false;
  for (std::size_t i = 0; i < a.tensors_.size(); ++i) {
    const auto& x = a.tensors_[i];
    const auto& y = b.tensors_[i];
    if (x.name != y.name || x.rows != y.rows || x.cols != y.cols) return false;
  }
  return true;
}

}  // namespace phead
