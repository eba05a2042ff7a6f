// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace phead {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <class S>
using MatMap = Eigen::Map<Mat<S>>;
template <class S>
using ConstMatMap = Eigen::Map<const Mat<S>>;

/// Named, shaped views into one flat parameter buffer. Gradients and
/// optimizer moments use buffers of the same layout.
class ParamLayout {
 public:
  struct Tensor {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t offset = 0;
    std::size_t size() const noexcept { return rows * cols; }
  };

  std::size_t add(std::string name, std::size_t rows, std::size_t cols);

  std::size_t total() const noexcept { return total_; }
  std::size_t count() const noexcept { return tensors_.size(); }
  const Tensor& tensor(std::size_t id) const { return tensors_.at(id); }
  const std::vector<Tensor>& tensors() const noexcept { return tensors_; }
  /// Index of the tensor named `name`, or count() when absent.
  std::size_t find(std::string_view name) const noexcept;

  template <class S>
  MatMap<S> map(std::vector<S>& buffer, std::size_t id) const {
    const auto& t = tensors_[id];
    return MatMap<S>(buffer.data() + t.offset, static_cast<Eigen::Index>(t.rows),
                     static_cast<Eigen::Index>(t.cols));
  }
  template <class S>
  ConstMatMap<S> map(const std::vector<S>& buffer, std::size_t id) const {
    const auto& t = tensors_[id];
    return ConstMatMap<S>(buffer.data() + t.offset, static_cast<Eigen::Index>(t.rows),
                          static_cast<Eigen::Index>(t.cols));
  }

  friend bool operator==(const ParamLayout& a, const ParamLayout& b);

 private:
  std::vector<Tensor> tensors_;
  std::size_t total_ = 0;
};

}  // namespace phead
