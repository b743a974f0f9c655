#include "ctrlgs/config.hpp"

#include <fstream>
#include <functional>

#include "ctrlgs/error.hpp"

namespace ctrlgs {

using nlohmann::json;

namespace {

struct Field {
  const char* key;
  std::function<json(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const json&)> set;
};

template <class T>
T expect(const json& v, const char* key) {
  const bool ok = [&] {
    if constexpr (std::is_same_v<T, bool>) return v.is_boolean();
    else if constexpr (std::is_same_v<T, std::uint64_t>) return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
    else if constexpr (std::is_integral_v<T>) return v.is_number_integer();
    else if constexpr (std::is_floating_point_v<T>) return v.is_number();
    else return v.is_string();
  }();
  if (!ok) fail(ErrorKind::kConfig, std::string("config key '") + key + "' has the wrong type (got " + v.dump() + ")");
  return v.get<T>();
}

template <class T>
Field member(const char* key, T TrainConfig::*ptr) {
  return {key, [ptr](const TrainConfig& c) { return json(c.*ptr); },
          [ptr, key](TrainConfig& c, const json& v) { c.*ptr = expect<T>(v, key); }};
}

template <class T>
Field lr_member(const char* key, T LearningRates::*ptr) {
  return {key, [ptr](const TrainConfig& c) { return json(c.lr.*ptr); },
          [ptr, key](TrainConfig& c, const json& v) { c.lr.*ptr = expect<T>(v, key); }};
}

template <class T>
Field grid_member(const char* key, T HexPlaneConfig::*ptr) {
  return {key, [ptr](const TrainConfig& c) { return json(c.grid.*ptr); },
          [ptr, key](TrainConfig& c, const json& v) { c.grid.*ptr = expect<T>(v, key); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      member("iterations", &TrainConfig::iterations),
      member("warmup_iterations", &TrainConfig::warmup_iterations),
      member("warmup_downscale", &TrainConfig::warmup_downscale),
      member("densify_interval", &TrainConfig::densify_interval),
      member("densify_until", &TrainConfig::densify_until),
      member("densify_grad_threshold", &TrainConfig::densify_grad_threshold),
      member("percent_dense", &TrainConfig::percent_dense),
      member("opacity_prune_threshold", &TrainConfig::opacity_prune_threshold),
      member("max_gaussians", &TrainConfig::max_gaussians),
      member("seed", &TrainConfig::seed),
      member("tv_weight", &TrainConfig::tv_weight),
      lr_member("lr_means", &LearningRates::means),
      lr_member("lr_means_final", &LearningRates::means_final),
      lr_member("lr_rotations", &LearningRates::rotations),
      lr_member("lr_log_scales", &LearningRates::log_scales),
      lr_member("lr_opacity", &LearningRates::opacity),
      lr_member("lr_sh", &LearningRates::sh),
      lr_member("lr_grid", &LearningRates::grid),
      lr_member("lr_networks", &LearningRates::networks),
      lr_member("lr_field_final_ratio", &LearningRates::field_final_ratio),
      member("eval_interval", &TrainConfig::eval_interval),
      member("threads", &TrainConfig::threads),
      member("deterministic", &TrainConfig::deterministic),
      member("segment_heads", &TrainConfig::segment_heads),
      {"window_method", [](const TrainConfig& c) { return json(window_method_name(c.window_method)); },
       [](TrainConfig& c, const json& v) {
         try {
           c.window_method = parse_window_method(expect<std::string>(v, "window_method"));
         } catch (const Error& e) {
           fail(ErrorKind::kConfig, e.what());
         }
       }},
      member("window_count", &TrainConfig::window_count),
      member("q", &TrainConfig::q),
      grid_member("grid_features", &HexPlaneConfig::features),
      grid_member("grid_spatial_resolution", &HexPlaneConfig::spatial_resolution),
      grid_member("grid_temporal_resolution", &HexPlaneConfig::temporal_resolution),
      grid_member("grid_levels", &HexPlaneConfig::levels),
      grid_member("grid_upsample", &HexPlaneConfig::upsample),
      grid_member("grid_init_noise", &HexPlaneConfig::init_noise),
      member("encoder_width", &TrainConfig::encoder_width),
      member("head_hidden", &TrainConfig::head_hidden),
      member("sh_degree", &TrainConfig::sh_degree),
      member("init_opacity", &TrainConfig::init_opacity),
      member("init_random_count", &TrainConfig::init_random_count),
      member("tile_size", &TrainConfig::tile_size),
  };
  return table;
}

}  // namespace

json config_to_json(const TrainConfig& config) {
  json j = json::object();
  for (const auto& f : fields()) j[f.key] = f.get(config);
  return j;
}

TrainConfig config_from_json(const json& j, TrainConfig base) {
  require(j.is_object(), ErrorKind::kConfig, "config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return key == f.key; });
    require(it != table.end(), ErrorKind::kConfig, "unknown config key '" + key + "'");
    it->set(base, value);
  }
  return base;
}

TrainConfig apply_overrides(TrainConfig config, const std::vector<std::string>& assignments) {
  json j = json::object();
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    require(eq != std::string::npos && eq > 0, ErrorKind::kConfig, "override '" + a + "' is not key=value");
    const std::string key = a.substr(0, eq);
    const std::string text = a.substr(eq + 1);
    json v = json::parse(text, nullptr, false);
    if (v.is_discarded()) v = text;
    j[key] = v;
  }
  return config_from_json(j, std::move(config));
}

TrainConfig resolve_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  TrainConfig config;
  if (!file.empty()) {
    std::ifstream is(file);
    require(bool(is), ErrorKind::kConfig, "cannot open config " + file.string());
    json j;
    try {
      j = json::parse(is);
    } catch (const json::exception& e) {
      fail(ErrorKind::kConfig, file.string() + ": not valid JSON: " + e.what());
    }
    config = config_from_json(j, config);
  }
  config = apply_overrides(config, overrides);
  config.validate();
  return config;
}

void write_config(const std::filesystem::path& path, const TrainConfig& config) {
  std::ofstream os(path);
  require(bool(os), ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  os << config_to_json(config).dump(2) << '\n';
  require(bool(os), ErrorKind::kIo, "failed writing " + path.string());
}

}  // namespace ctrlgs
