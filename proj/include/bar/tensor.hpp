#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace bar {

/// Dense row-major tensor over a scalar type.
///
/// The training path instantiates Tensor = TensorT<float>; gradient-check
/// tests instantiate TensorT<double> for tighter finite-difference bounds.
template <class T>
struct TensorT {
    std::vector<int> shape;
    std::vector<T> data;

    TensorT() = default;

    explicit TensorT(std::vector<int> shape_in) : shape(std::move(shape_in)) {
        data.assign(static_cast<std::size_t>(numel_of(shape)), T(0));
    }

    TensorT(std::vector<int> shape_in, std::vector<T> data_in)
        : shape(std::move(shape_in)), data(std::move(data_in)) {
        if (data.size() != static_cast<std::size_t>(numel_of(shape)))
            throw std::invalid_argument("tensor: data size " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
    }

    static TensorT zeros(std::vector<int> shape_in) { return TensorT(std::move(shape_in)); }

    static TensorT full(std::vector<int> shape_in, T value) {
        TensorT t(std::move(shape_in));
        for (auto& v : t.data) v = value;
        return t;
    }

    static TensorT scalar(T value) { return TensorT({1}, {value}); }

    [[nodiscard]] int numel() const { return numel_of(shape); }
    [[nodiscard]] int rank() const { return static_cast<int>(shape.size()); }

    [[nodiscard]] int dim(int i) const {
        if (i < 0 || i >= rank())
            throw std::invalid_argument("tensor: dim index " + std::to_string(i) +
                                        " out of range for shape " + shape_str(shape));
        return shape[static_cast<std::size_t>(i)];
    }

    /// Flat accessors; multi-index helpers below are for clarity in cold paths.
    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    T& at4(int a, int b, int c, int d) {
        return data[static_cast<std::size_t>(((a * shape[1] + b) * shape[2] + c) * shape[3] + d)];
    }
    const T& at4(int a, int b, int c, int d) const {
        return data[static_cast<std::size_t>(((a * shape[1] + b) * shape[2] + c) * shape[3] + d)];
    }
    T& at2(int a, int b) { return data[static_cast<std::size_t>(a * shape[1] + b)]; }
    const T& at2(int a, int b) const { return data[static_cast<std::size_t>(a * shape[1] + b)]; }

    [[nodiscard]] bool same_shape(const TensorT& other) const { return shape == other.shape; }

    [[nodiscard]] static int numel_of(const std::vector<int>& s) {
        int n = 1;
        for (int d : s) {
            if (d < 0) throw std::invalid_argument("tensor: negative dimension in shape " + shape_str(s));
            n *= d;
        }
        return n;
    }

    [[nodiscard]] static std::string shape_str(const std::vector<int>& s) {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i) os << ',';
            os << s[i];
        }
        os << ']';
        return os.str();
    }

    [[nodiscard]] std::string shape_str() const { return shape_str(shape); }
};

template <class T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                                    b.shape_str());
}

using Tensor = TensorT<float>;

}  // namespace bar
