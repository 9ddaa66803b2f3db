#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace seqseg {

// Error taxonomy shared across the library. The CLI maps these onto
// exit codes (usage/data/numeric).
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dense N-d array, channels-first, row-major, double precision.
// Feature maps are [C,H,W]; convolution kernels are [Co,Ci,kh,kw].
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(static_cast<std::size_t>(numel(shape)), 0.0);
    }
    Tensor(std::vector<int> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<std::int64_t>(data.size()) != numel(shape))
            throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                             " does not match shape product " + std::to_string(numel(shape)));
    }

    static std::int64_t numel(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int e : s) {
            if (e < 1) throw ShapeError("tensor: extent " + std::to_string(e) + " < 1");
            n *= e;
        }
        return n;
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, double v) {
        Tensor t(std::move(s));
        for (double& x : t.data) x = v;
        return t;
    }

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

    // [C,H,W] accessors
    double& at(int c, int y, int x) {
        return data[static_cast<std::size_t>((static_cast<std::int64_t>(c) * shape[1] + y) * shape[2] + x)];
    }
    double at(int c, int y, int x) const {
        return data[static_cast<std::size_t>((static_cast<std::int64_t>(c) * shape[1] + y) * shape[2] + x)];
    }
    // [A,B,C,D] accessors (kernels)
    double& at4(int a, int b, int c, int d) {
        return data[static_cast<std::size_t>(((static_cast<std::int64_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d)];
    }
    double at4(int a, int b, int c, int d) const {
        return data[static_cast<std::size_t>(((static_cast<std::int64_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d)];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    Tensor& operator+=(const Tensor& o) {
        if (!same_shape(o)) throw ShapeError("tensor: += shape mismatch");
        for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
        return *this;
    }
};

inline std::string shape_str(const std::vector<int>& s) {
    std::string r = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) r += ",";
        r += std::to_string(s[i]);
    }
    return r + "]";
}

inline double dot(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("tensor: dot shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

}  // namespace seqseg
