#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "saic/autograd.hpp"
#include "saic/rng.hpp"

namespace saic {

// Named parameter registry. Networks register their weights here so the
// optimizer, checkpointing, and freeze checks all see the same ordered list.
class ParamStore {
 public:
  Var add(const std::string& name, Tensor init, bool trainable = true) {
    for (const auto& e : entries_)
      check_contract(e.name != name, "ParamStore: duplicate parameter ", name);
    Var v(std::move(init), trainable);
    entries_.push_back({name, v});
    return v;
  }

  struct Entry {
    std::string name;
    Var var;
  };

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  Var find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return e.var;
    throw ContractError(cat("ParamStore: unknown parameter ", name));
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.var.value().numel();
    return n;
  }

  void freeze() {
    for (auto& e : entries_) e.var.set_requires_grad(false);
  }

  void zero_grad() {
    for (auto& e : entries_) e.var.zero_grad();
  }

  // Order-sensitive hash of all parameter values; used to prove that frozen
  // networks never drift during training.
  std::uint64_t checksum() const {
    std::uint64_t h = 14695981039346656037ull;
    for (const auto& e : entries_) {
      h = fnv1a(e.name.data(), e.name.size(), h);
      h = fnv1a(e.var.value().data(), e.var.value().numel() * sizeof(float), h);
    }
    return h;
  }

 private:
  std::vector<Entry> entries_;
};

inline Tensor he_normal(std::vector<int> dims, int fan_in, Rng& rng,
                        float gain = std::sqrt(2.0f)) {
  Tensor t(std::move(dims));
  const float stddev = gain / std::sqrt(static_cast<float>(fan_in));
  for (std::size_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<float>(rng.normal(0.0, stddev));
  return t;
}

struct Conv2d {
  Var w, b;
  int stride = 1, pad = 1;

  Conv2d() = default;
  Conv2d(ParamStore& params, const std::string& name, int cin, int cout, int k,
         int stride_, int pad_, Rng& rng, float gain = std::sqrt(2.0f))
      : stride(stride_), pad(pad_) {
    w = params.add(name + ".w", he_normal({cout, cin, k, k}, cin * k * k, rng, gain));
    b = params.add(name + ".b", Tensor({cout}));
  }

  Var operator()(const Var& x) const { return conv2d(x, w, b, stride, pad); }
};

struct Linear {
  Var w, b;

  Linear() = default;
  Linear(ParamStore& params, const std::string& name, int in, int out, Rng& rng,
         float gain = 1.0f) {
    w = params.add(name + ".w", he_normal({out, in}, in, rng, gain));
    b = params.add(name + ".b", Tensor({out}));
  }

  Var operator()(const Var& x) const { return linear(x, w, b); }
};

}  // namespace saic
