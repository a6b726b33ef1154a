#include "tdn/params.hpp"

#include <algorithm>
#include <cmath>

#include "tdn/util.hpp"

namespace tdn {

Tensor ParamStore::add(const std::string& name, Tensor t) {
  TDN_REQUIRE(!params_.count(name), "duplicate parameter name: ", name);
  TDN_REQUIRE(t.defined(), "parameter ", name, " is undefined");
  t.node()->requires_grad = true;
  params_.emplace(name, t);
  return t;
}

bool ParamStore::has(const std::string& name) const { return params_.count(name) > 0; }

Tensor ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  TDN_REQUIRE(it != params_.end(), "unknown parameter name: ", name);
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [k, v] : params_) out.push_back(k);
  return out;
}

std::int64_t ParamStore::total_elements() const {
  std::int64_t n = 0;
  for (const auto& [k, v] : params_) n += v.size();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& [k, v] : params_) v.zero_grad();
}

void ParamStore::sgd_step(double lr, double momentum) {
  for (auto& [name, p] : params_) {
    auto vals = p.values_mut();
    auto& vel = velocity_[name];
    if (vel.size() != vals.size()) vel.assign(vals.size(), 0.0);
    if (p.has_grad()) {
      auto g = p.grad();
      for (std::size_t i = 0; i < vals.size(); ++i) {
        vel[i] = momentum * vel[i] + g[i];
        vals[i] -= lr * vel[i];
      }
    } else {
      for (std::size_t i = 0; i < vals.size(); ++i) {
        vel[i] = momentum * vel[i];
        vals[i] -= lr * vel[i];
      }
    }
    p.zero_grad();
  }
}

Tensor kaiming_uniform(Shape shape, int fan_in, std::mt19937_64& rng) {
  TDN_REQUIRE(fan_in > 0, "kaiming_uniform: fan_in must be positive, got ", fan_in);
  const double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  const auto n = shape_numel(shape);
  std::vector<double> vals(static_cast<std::size_t>(n));
  for (auto& v : vals) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(vals));
}

Tensor zeros_param(Shape shape) { return Tensor::zeros(std::move(shape)); }

Tensor ones_param(Shape shape) { return Tensor::full(std::move(shape), 1.0); }

Tensor delta_depthwise(int channels, int k) {
  TDN_REQUIRE(k % 2 == 1, "delta_depthwise: kernel must be odd, got ", k);
  Tensor t = Tensor::zeros({channels, 1, k, k});
  auto v = t.values_mut();
  const int mid = (k / 2) * k + k / 2;
  for (int c = 0; c < channels; ++c) v[static_cast<std::size_t>(c) * k * k + mid] = 1.0;
  return t;
}

Tensor delta_temporal(int channels, int kt) {
  TDN_REQUIRE(kt % 2 == 1, "delta_temporal: kernel must be odd, got ", kt);
  Tensor t = Tensor::zeros({channels, kt});
  auto v = t.values_mut();
  for (int c = 0; c < channels; ++c) v[static_cast<std::size_t>(c) * kt + kt / 2] = 1.0;
  return t;
}

namespace {
constexpr char kMagic[4] = {'T', 'D', 'N', 'W'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& params) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(params.count()));
  for (const auto& [name, t] : params.entries()) {
    TDN_REQUIRE(name.size() <= 0xffff, "parameter name too long: ", name);
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.append(name);
    const auto& shape = t.shape();
    TDN_REQUIRE(shape.size() <= 0xff, "parameter rank too large: ", name);
    put_u8(out, static_cast<std::uint8_t>(shape.size()));
    for (int d : shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.values()) put_f64(out, v);
  }
  write_file(path, out);
}

std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
  const std::string buf = read_file(path);
  std::size_t pos = 0;
  char magic[4];
  get_bytes(buf, pos, magic, 4, "magic");
  TDN_REQUIRE(std::equal(magic, magic + 4, kMagic), "bad checkpoint magic in ", path,
              " (expected TDNW)");
  const std::uint32_t version = get_u32(buf, pos, "version");
  TDN_REQUIRE(version == kVersion, "unsupported checkpoint version ", version, " in ", path);
  const std::uint32_t count = get_u32(buf, pos, "entry count");

  std::map<std::string, Tensor> out;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::uint16_t name_len = get_u16(buf, pos, "name length");
    std::string name(name_len, '\0');
    get_bytes(buf, pos, name.data(), name_len, "name");
    const std::uint8_t rank = get_u8(buf, pos, "rank");
    Shape shape(rank);
    std::int64_t numel = 1;
    for (int d = 0; d < rank; ++d) {
      shape[static_cast<std::size_t>(d)] = static_cast<int>(get_u32(buf, pos, "dim"));
      TDN_REQUIRE(shape[static_cast<std::size_t>(d)] > 0, "non-positive dim in checkpoint entry ",
                  name);
      numel *= shape[static_cast<std::size_t>(d)];
    }
    std::vector<double> vals(static_cast<std::size_t>(numel));
    for (auto& v : vals) v = get_f64(buf, pos, "payload");
    TDN_REQUIRE(!out.count(name), "duplicate checkpoint entry: ", name);
    out.emplace(name, Tensor::from(std::move(shape), std::move(vals), true));
  }
  TDN_REQUIRE(pos == buf.size(), "trailing bytes in checkpoint ", path, " at byte offset ", pos);
  return out;
}

}  // namespace tdn
