#include "spikefuse/tensor.hpp"

#include <cmath>
#include <sstream>

namespace spikefuse {

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int e : shape) n *= e;
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<int> shape_in, double fill) : shape(std::move(shape_in)) {
    for (int e : shape)
        if (e <= 0) throw ShapeError("nonpositive extent in " + shape_str(shape));
    data.assign(static_cast<size_t>(shape_numel(shape)), fill);
}

Tensor Tensor::from(std::vector<int> shape_in, std::vector<double> values) {
    if (shape_numel(shape_in) != static_cast<int64_t>(values.size()))
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not fill " + shape_str(shape_in));
    Tensor t;
    t.shape = std::move(shape_in);
    t.data = std::move(values);
    return t;
}

Tensor Tensor::uniform(std::vector<int> shape_in, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape_in));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

int Tensor::extent(int axis) const {
    if (axis < 0 || axis >= ndim())
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
    return shape[static_cast<size_t>(axis)];
}

double& Tensor::at(int i) { return data[static_cast<size_t>(i)]; }
double Tensor::at(int i) const { return data[static_cast<size_t>(i)]; }

double& Tensor::at(int i, int j) {
    return data[static_cast<size_t>(i) * shape[1] + j];
}
double Tensor::at(int i, int j) const {
    return data[static_cast<size_t>(i) * shape[1] + j];
}

double& Tensor::at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
}
double Tensor::at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
}

double& Tensor::at4(int a, int b, int c, int d) {
    return data[((static_cast<size_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
}
double Tensor::at4(int a, int b, int c, int d) const {
    return data[((static_cast<size_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
}

Tensor Tensor::reshaped(std::vector<int> new_shape) const {
    if (shape_numel(new_shape) != numel())
        throw ShapeError("cannot reshape " + shape_str(shape) + " to " + shape_str(new_shape));
    Tensor t;
    t.shape = std::move(new_shape);
    t.data = data;
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace spikefuse
