#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spikefuse/errors.hpp"
#include "spikefuse/rng.hpp"

namespace spikefuse {

/// Dense row-major tensor of doubles. Reshaping never reorders data; the
/// flat buffer is the canonical representation.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> shape_in, double fill = 0.0);

    static Tensor zeros(std::vector<int> shape_in) { return Tensor(std::move(shape_in)); }
    static Tensor full(std::vector<int> shape_in, double value) {
        return Tensor(std::move(shape_in), value);
    }
    static Tensor from(std::vector<int> shape_in, std::vector<double> values);
    static Tensor uniform(std::vector<int> shape_in, Rng& rng, double lo, double hi);

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int extent(int axis) const;
    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    double& at(int i);
    double at(int i) const;
    double& at(int i, int j);
    double at(int i, int j) const;
    double& at(int c, int y, int x);
    double at(int c, int y, int x) const;
    double& at4(int a, int b, int c, int d);
    double at4(int a, int b, int c, int d) const;

    // Metadata-only reshape: element order in the flat buffer is unchanged.
    Tensor reshaped(std::vector<int> new_shape) const;

    bool all_finite() const;
};

std::string shape_str(const std::vector<int>& shape);
int64_t shape_numel(const std::vector<int>& shape);

}  // namespace spikefuse
