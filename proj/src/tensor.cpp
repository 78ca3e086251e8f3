#include "enas/tensor.hpp"

#include <cstring>

namespace enas {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <class T>
BasicTensor<T> take_rows(const BasicTensor<T>& t, std::size_t begin, std::size_t count) {
  if (t.rank() == 0 || begin + count > t.dim(0)) {
    throw DimensionError("take_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside axis 0 of " + shape_str(t.shape()));
  }
  Shape shape = t.shape();
  const std::size_t row = t.numel() / shape[0];
  shape[0] = count;
  BasicTensor<T> out(shape);
  if (count) std::memcpy(out.data(), t.data() + begin * row, count * row * sizeof(T));
  return out;
}

template <class T>
BasicTensor<T> concat_rows(std::span<const BasicTensor<T>* const> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  Shape shape = parts[0]->shape();
  std::size_t rows = 0;
  for (const auto* p : parts) {
    if (p->rank() != shape.size() || !std::equal(shape.begin() + 1, shape.end(), p->shape().begin() + 1)) {
      throw DimensionError("concat_rows: trailing shape " + shape_str(p->shape()) + " vs " + shape_str(shape));
    }
    rows += p->dim(0);
  }
  shape[0] = rows;
  BasicTensor<T> out(shape);
  T* dst = out.data();
  for (const auto* p : parts) {
    std::memcpy(dst, p->data(), p->numel() * sizeof(T));
    dst += p->numel();
  }
  return out;
}

template <class T>
BasicTensor<T> gather_rows(const BasicTensor<T>& t, std::span<const std::size_t> rows) {
  Shape shape = t.shape();
  const std::size_t row = t.numel() / shape[0];
  shape[0] = rows.size();
  BasicTensor<T> out(shape);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= t.dim(0)) throw DimensionError("gather_rows: row index out of range");
    std::memcpy(out.data() + i * row, t.data() + rows[i] * row, row * sizeof(T));
  }
  return out;
}

template BasicTensor<float> take_rows(const BasicTensor<float>&, std::size_t, std::size_t);
template BasicTensor<double> take_rows(const BasicTensor<double>&, std::size_t, std::size_t);
template BasicTensor<float> concat_rows(std::span<const BasicTensor<float>* const>);
template BasicTensor<double> concat_rows(std::span<const BasicTensor<double>* const>);
template BasicTensor<float> gather_rows(const BasicTensor<float>&, std::span<const std::size_t>);
template BasicTensor<double> gather_rows(const BasicTensor<double>&, std::span<const std::size_t>);

}  // namespace enas
