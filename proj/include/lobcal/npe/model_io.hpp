#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "lobcal/npe/npe.hpp"

namespace lobcal::npe {

using nlohmann::json;

inline json to_json(const PriorSpec& p) {
  return json{{"kind", p.kind == PriorSpec::Kind::Uniform ? "uniform" : "gaussian"},
              {"names", p.names},
              {"lower", p.lower},
              {"upper", p.upper}};
}

inline PriorSpec prior_from_json(const json& j) {
  PriorSpec p;
  const std::string kind = j.value("kind", "uniform");
  if (kind != "uniform" && kind != "gaussian") throw DataError("unknown prior kind '" + kind + "'");
  p.kind = kind == "uniform" ? PriorSpec::Kind::Uniform : PriorSpec::Kind::Gaussian;
  p.names = j.value("names", std::vector<std::string>{});
  p.lower = j.at("lower").get<std::vector<double>>();
  p.upper = j.at("upper").get<std::vector<double>>();
  p.validate();
  return p;
}

inline json to_json(const features::NormStats& s) {
  return json{{"kind", features::to_string(s.kind)}, {"length", s.length},           {"mean", s.mean},
              {"scale", s.scale},                    {"provenance", s.provenance},   {"fitted_rows", s.fitted_rows},
              {"zero_variance_columns", s.zero_variance_columns}};
}

inline features::NormStats norm_from_json(const json& j) {
  features::NormStats s;
  s.kind = features::parse_feature_kind(j.at("kind").get<std::string>());
  s.length = j.at("length").get<std::size_t>();
  s.mean = j.at("mean").get<std::vector<double>>();
  s.scale = j.at("scale").get<std::vector<double>>();
  s.provenance = j.value("provenance", "");
  s.fitted_rows = j.value("fitted_rows", std::size_t{0});
  s.zero_variance_columns = j.value("zero_variance_columns", std::size_t{0});
  if (s.mean.size() != s.scale.size() || s.mean.size() != features::channels(s.kind) * s.length) {
    throw DataError("normalisation statistics have inconsistent sizes");
  }
  return s;
}

inline json to_json(const NpeConfig& c) {
  return json{{"flavor", to_string(c.flavor)},
              {"embed_hidden", c.embed_hidden},
              {"embed_layers", c.embed_layers},
              {"embed_out", c.embed_out},
              {"dropout", c.dropout},
              {"flow_transforms", c.flow_transforms},
              {"flow_hidden", c.flow_hidden},
              {"flow_hidden_layers", c.flow_hidden_layers},
              {"spline_bins", c.spline.bins},
              {"spline_tail_bound", c.spline.tail_bound}};
}

inline NpeConfig npe_config_from_json(const json& j) {
  NpeConfig c;
  c.flavor = parse_flow_flavor(j.value("flavor", "nsf"));
  c.embed_hidden = j.value("embed_hidden", c.embed_hidden);
  c.embed_layers = j.value("embed_layers", c.embed_layers);
  c.embed_out = j.value("embed_out", c.embed_out);
  c.dropout = j.value("dropout", c.dropout);
  c.flow_transforms = j.value("flow_transforms", c.flow_transforms);
  c.flow_hidden = j.value("flow_hidden", c.flow_hidden);
  c.flow_hidden_layers = j.value("flow_hidden_layers", c.flow_hidden_layers);
  c.spline.bins = j.value("spline_bins", c.spline.bins);
  c.spline.tail_bound = j.value("spline_tail_bound", c.spline.tail_bound);
  if (c.embed_layers < 1 || c.flow_transforms < 1 || c.flow_hidden_layers < 1 || c.spline.bins < 2) {
    throw ParameterError("model configuration has an empty network");
  }
  return c;
}

inline constexpr std::string_view kModelMagic = "LOBCAL-NPE-MODEL 1";

/// Header JSON of a model file.
inline json model_header(const NpeModel& m) {
  json h{{"config", to_json(m.config())},
         {"prior", to_json(m.prior())},
         {"obs_dim", m.obs_dim()},
         {"model_kind", m.meta().model_kind},
         {"seed", m.meta().seed},
         {"param_hash", m.params().content_hash()}};
  if (m.meta().norm) h["norm"] = to_json(*m.meta().norm);
  return h;
}

/// Layout: magic line, decimal header byte count line, JSON header, parameter blob.
inline void save_model(std::ostream& os, const NpeModel& m) {
  const std::string header = model_header(m).dump();
  os << kModelMagic << '\n' << header.size() << '\n' << header;
  nn::write_params(os, m.params());
  if (!os) throw DataError("failed writing model");
}

inline NpeModel load_model(std::istream& is) {
  std::string magic;
  if (!std::getline(is, magic) || magic != kModelMagic) throw DataError("not a model file (bad magic line)");
  std::string len_line;
  if (!std::getline(is, len_line)) throw DataError("model file truncated");
  std::size_t len = 0;
  try {
    len = std::stoul(len_line);
  } catch (const std::exception&) {
    throw DataError("model file header length is not a number");
  }
  std::string header(len, '\0');
  if (!is.read(header.data(), static_cast<std::streamsize>(len))) throw DataError("model file truncated");
  json h;
  try {
    h = json::parse(header);
  } catch (const json::exception& e) {
    throw DataError(std::string("model header is not valid JSON: ") + e.what());
  }
  ModelMeta meta;
  meta.model_kind = h.value("model_kind", "");
  meta.seed = h.value("seed", std::uint64_t{0});
  if (h.contains("norm")) meta.norm = norm_from_json(h["norm"]);
  NpeModel m(npe_config_from_json(h.at("config")), prior_from_json(h.at("prior")), h.at("obs_dim").get<std::size_t>(),
             std::move(meta));
  nn::read_params(is, m.params());
  if (h.contains("param_hash") && h["param_hash"].get<std::uint64_t>() != m.params().content_hash()) {
    throw DataError("model parameters do not match the header hash");
  }
  return m;
}

/// Writes to a temporary sibling and renames it into place.
inline void save_model(const std::filesystem::path& path, const NpeModel& m) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open '" + tmp.string() + "' for writing");
    save_model(os, m);
  }
  std::filesystem::rename(tmp, path);
}

inline NpeModel load_model(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open model file '" + path.string() + "'");
  return load_model(is);
}

}  // namespace lobcal::npe
