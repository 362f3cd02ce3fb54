#include "sar2rgb/nn/module.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "sar2rgb/errors.hpp"

namespace sar2rgb::nn {

namespace {

constexpr char kMagic[4] = {'S', '2', 'R', 'W'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw DataError("truncated weights blob");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

void write_f32(std::ostream& os, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  write_u32(os, u);
}

float read_f32(std::istream& is) {
  std::uint32_t u = read_u32(is);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

void write_f64(std::ostream& os, double d) {
  std::uint64_t u;
  std::memcpy(&u, &d, 8);
  write_u32(os, static_cast<std::uint32_t>(u));
  write_u32(os, static_cast<std::uint32_t>(u >> 32));
}

double read_f64(std::istream& is) {
  std::uint64_t lo = read_u32(is);
  std::uint64_t hi = read_u32(is);
  std::uint64_t u = lo | hi << 32;
  double d;
  std::memcpy(&d, &u, 8);
  return d;
}

}  // namespace

template <class T>
Var<T> ParameterSet<T>::add(std::string name, Matrix<T> init) {
  for (const auto& p : items_)
    if (p.name == name) throw std::invalid_argument("duplicate parameter name: " + name);
  Var<T> v(std::move(init), true);
  items_.push_back({std::move(name), v});
  return v;
}

template <class T>
const Var<T>& ParameterSet<T>::find(const std::string& name) const {
  for (const auto& p : items_)
    if (p.name == name) return p.var;
  throw std::out_of_range("no parameter named " + name);
}

template <class T>
std::size_t ParameterSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += static_cast<std::size_t>(p.var.value().size());
  return n;
}

template <class T>
void ParameterSet<T>::zero_grad() {
  for (auto& p : items_) p.var.zero_grad();
}

template <class T>
void ParameterSet<T>::save(std::ostream& os) const {
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  write_u32(os, static_cast<std::uint32_t>(items_.size()));
  for (const auto& p : items_) {
    write_u32(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const auto& m = p.var.value();
    write_u32(os, static_cast<std::uint32_t>(m.rows()));
    write_u32(os, static_cast<std::uint32_t>(m.cols()));
    for (Index i = 0; i < m.size(); ++i) write_f32(os, static_cast<float>(m.data()[i]));
  }
  if (!os) throw DataError("failed writing weights blob");
}

template <class T>
void ParameterSet<T>::load(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("not a weights blob (bad magic)");
  if (read_u32(is) != kVersion) throw DataError("unsupported weights blob version");
  if (read_u32(is) != items_.size()) throw DataError("weights blob tensor count mismatch");
  for (auto& p : items_) {
    std::string name(read_u32(is), '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(name.size())))
      throw DataError("truncated weights blob");
    if (name != p.name) throw DataError("weights blob expected " + p.name + ", found " + name);
    const auto rows = read_u32(is);
    const auto cols = read_u32(is);
    auto& m = p.var.mutable_value();
    if (rows != m.rows() || cols != m.cols()) throw DataError("shape mismatch for " + name);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(read_f32(is));
  }
}

template <class T>
Matrix<T> xavier_uniform(Index fan_in, Index fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix<T> m(fan_in, fan_out);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>((2.0 * rng.uniform() - 1.0) * a);
  return m;
}

template <class T>
Matrix<T> normal_init(Index rows, Index cols, double stddev, Rng& rng) {
  Matrix<T> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.normal() * stddev);
  return m;
}

template <class T>
Matrix<T> kaiming_uniform(Index out, Index fan_in, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in));
  Matrix<T> m(out, fan_in);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>((2.0 * rng.uniform() - 1.0) * a);
  return m;
}

template <class T>
void AdamW<T>::step(ParameterSet<T>& params) {
  auto& items = params.items();
  if (m_.empty()) {
    for (const auto& p : items) {
      m_.push_back(Eigen::MatrixXd::Zero(p.var.rows(), p.var.cols()));
      v_.push_back(Eigen::MatrixXd::Zero(p.var.rows(), p.var.cols()));
    }
  }
  if (m_.size() != items.size()) throw std::logic_error("optimizer bound to a different parameter set");
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& var = items[i].var;
    const auto& g = var.grad();
    // tensors no gradient reached are left untouched, moments included
    if (g.size() == 0) continue;
    auto& w = var.mutable_value();
    if (cfg_.weight_decay != 0.0) w *= static_cast<T>(1.0 - cfg_.lr * cfg_.weight_decay);
    Eigen::MatrixXd gd = g.template cast<double>();
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * gd;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * gd.cwiseProduct(gd);
    Eigen::MatrixXd update =
        (m_[i] / bc1).array() / ((v_[i] / bc2).array().sqrt() + cfg_.eps);
    w -= (cfg_.lr * update).template cast<T>();
  }
}

template <class T>
void AdamW<T>::save(std::ostream& os) const {
  os.write("S2RO", 4);
  write_u32(os, kVersion);
  write_u32(os, static_cast<std::uint32_t>(steps_));
  write_u32(os, static_cast<std::uint32_t>(static_cast<std::uint64_t>(steps_) >> 32));
  write_u32(os, static_cast<std::uint32_t>(m_.size()));
  for (std::size_t i = 0; i < m_.size(); ++i) {
    write_u32(os, static_cast<std::uint32_t>(m_[i].rows()));
    write_u32(os, static_cast<std::uint32_t>(m_[i].cols()));
    for (Index k = 0; k < m_[i].size(); ++k) write_f64(os, m_[i].data()[k]);
    for (Index k = 0; k < v_[i].size(); ++k) write_f64(os, v_[i].data()[k]);
  }
  if (!os) throw DataError("failed writing optimizer state");
}

template <class T>
void AdamW<T>::load(std::istream& is, const ParameterSet<T>& params) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "S2RO", 4) != 0)
    throw DataError("not an optimizer state blob");
  if (read_u32(is) != kVersion) throw DataError("unsupported optimizer state version");
  std::uint64_t lo = read_u32(is);
  std::uint64_t hi = read_u32(is);
  steps_ = static_cast<std::int64_t>(lo | hi << 32);
  const auto n = read_u32(is);
  m_.clear();
  v_.clear();
  if (n != 0 && n != params.items().size()) throw DataError("optimizer state tensor count mismatch");
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto rows = read_u32(is);
    const auto cols = read_u32(is);
    const auto& ref = params.items()[i].var;
    if (rows != ref.rows() || cols != ref.cols()) throw DataError("optimizer state shape mismatch");
    Eigen::MatrixXd m(rows, cols);
    Eigen::MatrixXd v(rows, cols);
    for (Index k = 0; k < m.size(); ++k) m.data()[k] = read_f64(is);
    for (Index k = 0; k < v.size(); ++k) v.data()[k] = read_f64(is);
    m_.push_back(std::move(m));
    v_.push_back(std::move(v));
  }
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template class AdamW<float>;
template class AdamW<double>;
template Matrix<float> xavier_uniform<float>(Index, Index, Rng&);
template Matrix<double> xavier_uniform<double>(Index, Index, Rng&);
template Matrix<float> normal_init<float>(Index, Index, double, Rng&);
template Matrix<double> normal_init<double>(Index, Index, double, Rng&);
template Matrix<float> kaiming_uniform<float>(Index, Index, Rng&);
template Matrix<double> kaiming_uniform<double>(Index, Index, Rng&);

}  // namespace sar2rgb::nn
