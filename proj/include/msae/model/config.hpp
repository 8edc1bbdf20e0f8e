#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "msae/error.hpp"

namespace msae {

/// Network shape. Field names double as CLI flag and JSON key names.
struct ModelConfig {
  int J = 19;
  int F = 3;
  int d_enc = 64;
  int d_dec = 32;
  int n_enc = 9;
  int n_dec = 4;
  int heads = 4;
  int mlp_ratio = 4;
  int max_T = 512;
  int iffa_kernel = 3;

  /// Desk-scale variant used by the overfit experiment: full depth,
  /// narrow widths.
  static ModelConfig tiny() {
    ModelConfig c;
    c.d_enc = 16;
    c.d_dec = 16;
    c.heads = 2;
    c.mlp_ratio = 2;
    c.max_T = 64;
    return c;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidConfig, m); };
    if (J < 2) fail("J must be >= 2");
    if (F < 1) fail("F must be >= 1");
    if (d_enc < 1 || d_dec < 1) fail("widths must be positive");
    if (n_enc < 0 || n_dec < 0) fail("layer counts must be >= 0");
    if (heads < 1 || d_enc % heads != 0 || d_dec % heads != 0) fail("d_enc and d_dec must be divisible by heads");
    if (mlp_ratio < 1) fail("mlp_ratio must be >= 1");
    if (max_T < F) fail("max_T must be >= F");
    if (iffa_kernel < 1 || iffa_kernel % 2 == 0) fail("iffa_kernel must be a positive odd number");
  }

  bool operator==(const ModelConfig&) const = default;
};

/// Hidden width of the channel gate (reduction 4, at least 1).
inline int gate_width(int d) { return d >= 4 ? d / 4 : 1; }

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"J", c.J},         {"F", c.F},         {"d_enc", c.d_enc},         {"d_dec", c.d_dec},
       {"n_enc", c.n_enc}, {"n_dec", c.n_dec}, {"heads", c.heads},         {"mlp_ratio", c.mlp_ratio},
       {"max_T", c.max_T}, {"iffa_kernel", c.iffa_kernel}};
}

/// Missing keys keep their current value so partial config files work.
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  auto get = [&](const char* key, int& field) {
    if (j.contains(key)) field = j.at(key).get<int>();
  };
  get("J", c.J);
  get("F", c.F);
  get("d_enc", c.d_enc);
  get("d_dec", c.d_dec);
  get("n_enc", c.n_enc);
  get("n_dec", c.n_dec);
  get("heads", c.heads);
  get("mlp_ratio", c.mlp_ratio);
  get("max_T", c.max_T);
  get("iffa_kernel", c.iffa_kernel);
}

}  // namespace msae
