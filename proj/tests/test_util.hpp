#pragma once

#include <gtest/gtest.h>

#include <vector>

#include "graphfuse/tensor.hpp"

namespace gftest {

using graphfuse::Dims;
using graphfuse::Rng;
using graphfuse::Tensor;
using graphfuse::TensorPtr;

template <typename T>
TensorPtr<T> make(Dims dims, std::vector<T> values, bool track = false) {
    return Tensor<T>::create(std::move(dims), std::move(values), track);
}

template <typename T>
TensorPtr<T> random_tensor(Dims dims, Rng& rng, double lo = -1.0, double hi = 1.0,
                           bool track = false) {
    auto t = Tensor<T>::zeros(std::move(dims), track);
    graphfuse::fill_uniform(*t, rng, lo, hi);
    return t;
}

template <typename T>
void expect_all_near(const Tensor<T>& t, const std::vector<T>& expected, double tol,
                     const char* what = "") {
    ASSERT_EQ(t.data.size(), expected.size()) << what;
    for (std::size_t i = 0; i < expected.size(); ++i) {
        EXPECT_NEAR(static_cast<double>(t.data[i]), static_cast<double>(expected[i]), tol)
            << what << " at flat index " << i;
    }
}

template <typename T>
void expect_tensors_equal(const Tensor<T>& a, const Tensor<T>& b, const char* what = "") {
    ASSERT_EQ(a.dims, b.dims) << what;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        ASSERT_EQ(a.data[i], b.data[i]) << what << " at flat index " << i;
    }
}

}  // namespace gftest
