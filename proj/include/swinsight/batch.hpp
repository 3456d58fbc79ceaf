#pragma once

#include <cstddef>
#include <vector>

#include "tensor.hpp"

namespace swinsight {

/// A preprocessed minibatch: images [B, 3, S, S], labels in {0, 1}, and the
/// positions of the samples in the source split.
template <typename T>
struct ImageBatch {
    Tensor<T> images;
    std::vector<int> labels;
    std::vector<std::size_t> indices;

    std::size_t size() const noexcept { return labels.size(); }
};

}  // namespace swinsight
