#include "smtl/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "smtl/errors.hpp"
#include "smtl/morphology.hpp"
#include "smtl/rng.hpp"

namespace smtl::model {

using ag::Graph;
using ag::Shape;
using ag::Tensor;
using nlohmann::json;

const char* task_name(Task t) {
  switch (t) {
    case Task::Er: return "er";
    case Task::Pr: return "pr";
    case Task::Her2: return "her2";
    case Task::Ki67: return "ki67";
  }
  return "?";
}

std::optional<Task> parse_task(const std::string& name) {
  for (Task t : kAllTasks)
    if (name == task_name(t)) return t;
  return std::nullopt;
}

std::vector<int> ModelConfig::active_radii() const {
  if (!ablation.attention) return {};
  if (!ablation.multiscale && !attention_radii.empty())
    return {*std::max_element(attention_radii.begin(), attention_radii.end())};
  return attention_radii;
}

void ModelConfig::validate() const {
  if (dims.h < 8 || dims.w < 8 || dims.d < 8)
    throw DataError("model input dims must be at least 8x8x8, got " +
                    dims.str());
  if (stage_channels.empty())
    throw DataError("model needs at least one backbone stage");
  for (int c : stage_channels)
    if (c < 1) throw DataError("backbone stage width must be positive");
  const int f = downsample();
  if (dims.h % f || dims.w % f || dims.d % f)
    throw DataError("downsample factor " + std::to_string(f) +
                    " does not divide input dims " + dims.str());
  if (ablation.attention) {
    if (attention_radii.empty())
      throw DataError("attention radii set is empty");
    for (int r : attention_radii)
      if (r < 1) throw DataError("attention radius must be >= 1");
    if (ablation.multiscale && attention_radii.size() < 2)
      throw DataError("multi-scale attention needs at least 2 radii");
  }
  if (head_hidden < 1) throw DataError("head hidden width must be positive");
  if (!(dropout_keep > 0.0 && dropout_keep <= 1.0))
    throw DataError("dropout keep probability must be in (0, 1]");
}

int64_t ParamSet::total_size() const {
  int64_t n = 0;
  for (const auto& [name, t] : entries) n += t.numel();
  return n;
}

ag::Tensor* ParamSet::find(const std::string& name) {
  for (auto& [n, t] : entries)
    if (n == name) return &t;
  return nullptr;
}

const ag::Tensor* ParamSet::find(const std::string& name) const {
  for (const auto& [n, t] : entries)
    if (n == name) return &t;
  return nullptr;
}

std::vector<double> ParamSet::flatten() const {
  std::vector<double> flat;
  flat.reserve(static_cast<size_t>(total_size()));
  for (const auto& [name, t] : entries)
    flat.insert(flat.end(), t.data.begin(), t.data.end());
  return flat;
}

void ParamSet::unflatten(const std::vector<double>& flat) {
  if (static_cast<int64_t>(flat.size()) != total_size())
    throw std::invalid_argument("unflatten: size mismatch");
  size_t off = 0;
  for (auto& [name, t] : entries) {
    std::copy(flat.begin() + static_cast<int64_t>(off),
              flat.begin() + static_cast<int64_t>(off) + t.numel(),
              t.data.begin());
    off += static_cast<size_t>(t.numel());
  }
}

namespace {

std::vector<std::string> backbone_owners(const ModelConfig& cfg) {
  if (cfg.ablation.shared_backbone) return {""};
  std::vector<std::string> owners;
  for (Task t : kAllTasks) owners.push_back(task_name(t));
  return owners;
}

std::string owner_prefix(const std::string& owner) {
  return owner.empty() ? "" : owner + ".";
}

}  // namespace

ParamSet init_model(const ModelConfig& cfg) {
  cfg.validate();
  rng::Stream s(rng::mix(cfg.seed, 0x1417));
  ParamSet params;

  auto add_uniform = [&](const std::string& name, Shape shape, int64_t fan_in) {
    Tensor t(shape);
    const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
    for (double& v : t.data) v = s.uniform(-bound, bound);
    params.entries.emplace_back(name, std::move(t));
  };
  auto add_zeros = [&](const std::string& name, Shape shape) {
    params.entries.emplace_back(name, Tensor(std::move(shape)));
  };

  for (const std::string& owner : backbone_owners(cfg)) {
    int64_t cin = 1;
    for (size_t i = 0; i < cfg.stage_channels.size(); ++i) {
      const int64_t cout = cfg.stage_channels[i];
      const std::string base =
          "backbone." + owner_prefix(owner) + "s" + std::to_string(i);
      add_uniform(base + ".w", {cout, cin, 3, 3, 3}, cin * 27);
      add_zeros(base + ".b", {cout});
      cin = cout;
    }
    if (cfg.ablation.attention) {
      for (int r : cfg.active_radii()) {
        const int64_t k = 2 * r + 1;
        const std::string base =
            "attn." + owner_prefix(owner) + "r" + std::to_string(r);
        add_uniform(base + ".w", {1, 2, k, k, k}, 2 * k * k * k);
        add_zeros(base + ".b", {1});
      }
    }
  }

  const int64_t c = cfg.feature_channels();
  for (Task t : kAllTasks) {
    const std::string tn = task_name(t);
    add_uniform("gate." + tn + ".w", {3, 3 * c}, 3 * c);
    add_zeros("gate." + tn + ".b", {3});
  }
  for (Task t : kAllTasks) {
    const std::string tn = task_name(t);
    add_uniform("head." + tn + ".w1", {cfg.head_hidden, c}, c);
    add_uniform("head." + tn + ".w2", {1, cfg.head_hidden}, cfg.head_hidden);
  }
  return params;
}

const ag::Tensor& BoundParams::operator[](const std::string& name) const {
  auto it = index.find(name);
  if (it == index.end())
    throw std::invalid_argument("unknown parameter: " + name);
  return leaves[it->second];
}

BoundParams bind_params(Graph& g, const ParamSet& params) {
  BoundParams bound;
  bound.set = &params;
  bound.leaves.reserve(params.entries.size());
  for (size_t i = 0; i < params.entries.size(); ++i) {
    bound.leaves.push_back(g.leaf(params.entries[i].second));
    bound.index.emplace(params.entries[i].first, i);
  }
  return bound;
}

ag::Tensor volume_to_tensor(const data::Volume& v) {
  Tensor t({1, v.dims.d, v.dims.h, v.dims.w});
  for (size_t i = 0; i < v.voxels.size(); ++i)
    t.data[i] = static_cast<double>(v.voxels[i]);
  return t;
}

ag::Tensor mask_to_tensor(const data::TumorMask& m) {
  Tensor t({m.dims.d, m.dims.h, m.dims.w});
  for (size_t i = 0; i < m.bits.size(); ++i)
    t.data[i] = static_cast<double>(m.bits[i]);
  return t;
}

ZoneMasks prepare_zones(const data::TumorMask& mask, int factor) {
  const morph::RoiZones z = morph::make_zones(mask);
  ZoneMasks zm;
  const data::TumorMask core = morph::downsample_mask(z.core, factor);
  const data::TumorMask rim = morph::downsample_mask(z.rim, factor);
  const data::TumorMask peri = morph::downsample_mask(z.peri, factor);
  zm.core = mask_to_tensor(core);
  zm.rim = mask_to_tensor(rim);
  zm.peri = mask_to_tensor(peri);
  zm.core_count = static_cast<double>(core.foreground_count());
  zm.rim_count = static_cast<double>(rim.foreground_count());
  zm.peri_count = static_cast<double>(peri.foreground_count());
  zm.core_fallback = z.core_fallback;
  return zm;
}

ag::Tensor backbone_forward(Graph& g, const BoundParams& P,
                            const ModelConfig& cfg, const ag::Tensor& volume,
                            const std::string& owner) {
  Tensor x = volume;
  for (size_t i = 0; i < cfg.stage_channels.size(); ++i) {
    const std::string base =
        "backbone." + owner_prefix(owner) + "s" + std::to_string(i);
    x = g.relu(g.conv3d(x, P[base + ".w"], P[base + ".b"], 2, 1));
  }
  return x;
}

AttentionOut attention_forward(Graph& g, const BoundParams& P,
                               const ModelConfig& cfg, const ag::Tensor& feat,
                               const std::string& owner) {
  AttentionOut out;
  if (!cfg.ablation.attention) {
    Shape map_shape(feat.shape.begin() + 1, feat.shape.end());
    out.map = Tensor(map_shape, 1.0);
    out.modulated = feat;
    return out;
  }
  const Shape stats_shape = {2, feat.shape[1], feat.shape[2], feat.shape[3]};
  const Tensor stats =
      g.concat({g.mean_channel(feat), g.max_channel(feat)}, stats_shape);
  Tensor logits;
  bool first = true;
  for (int r : cfg.active_radii()) {
    const std::string base = "attn." + owner_prefix(owner) + "r" +
                             std::to_string(r);
    const Tensor part = g.conv3d(stats, P[base + ".w"], P[base + ".b"], 1, r);
    logits = first ? part : g.add(logits, part);
    first = false;
  }
  out.map = g.sigmoid(logits);  // [1, D', H', W']
  out.modulated = g.mul(feat, out.map);
  return out;
}

ag::Tensor masked_pool(Graph& g, const ag::Tensor& f_spatial,
                       const ag::Tensor& zone, double count) {
  if (count <= 0.0) throw DataError("masked_pool: empty zone");
  const int64_t spatial = f_spatial.numel() / f_spatial.shape[0];
  if (zone.numel() != spatial)
    throw std::invalid_argument("masked_pool: zone has " +
                                std::to_string(zone.numel()) +
                                " voxels, features have " +
                                std::to_string(spatial));
  return g.scale(g.sum_spatial(g.mul(f_spatial, zone)), 1.0 / count);
}

ag::Tensor gate_logits(Graph& g, const BoundParams& P, Task t,
                       const ag::Tensor& zone_concat) {
  const std::string tn = task_name(t);
  return g.linear(P["gate." + tn + ".w"], zone_concat, P["gate." + tn + ".b"]);
}

ag::Tensor gate_weights(Graph& g, const BoundParams& P, Task t,
                        const ag::Tensor& zone_concat) {
  return g.softmax(gate_logits(g, P, t, zone_concat), 0);
}

ag::Tensor roi_weighted(Graph& g,
                        const std::array<ag::Tensor, 3>& zone_feats,
                        const ag::Tensor& weights) {
  Tensor fused;
  for (int64_t r = 0; r < 3; ++r) {
    const Tensor term =
        g.mul(zone_feats[static_cast<size_t>(r)], g.gather(weights, {r}));
    fused = r == 0 ? term : g.add(fused, term);
  }
  return fused;
}

namespace {

struct ZoneNodes {
  std::array<Tensor, 3> feats;  // core, rim, peri (zeros when unavailable)
  std::array<bool, 3> enabled{true, true, true};
};

// Pools the three zones from one modulated feature map. Zones disabled by
// ablation contribute a zero vector and are excluded from the gate softmax;
// an empty rim or peritumoral zone also degrades to the zero vector.
ZoneNodes pool_zones(Graph& g, const ag::Tensor& f_spatial,
                     const ZoneMasks& zm, const ModelConfig& cfg) {
  ZoneNodes zn;
  const int64_t c = cfg.feature_channels();
  const Tensor zero = g.leaf(Tensor({c}));
  zn.enabled = {true, cfg.ablation.use_rim, cfg.ablation.use_peri};

  zn.feats[0] = masked_pool(g, f_spatial, zm.core, zm.core_count);
  zn.feats[1] = (zn.enabled[1] && zm.rim_count > 0)
                    ? masked_pool(g, f_spatial, zm.rim, zm.rim_count)
                    : zero;
  zn.feats[2] = (zn.enabled[2] && zm.peri_count > 0)
                    ? masked_pool(g, f_spatial, zm.peri, zm.peri_count)
                    : zero;
  return zn;
}

struct GateOut {
  Tensor fused;                  // [C]
  std::array<double, 3> weights;  // reported gate vector, sums to 1
};

GateOut gate_and_fuse(Graph& g, const BoundParams& P, const ModelConfig& cfg,
                      Task t, const ZoneNodes& zn) {
  const int64_t c = cfg.feature_channels();
  const Tensor zcat =
      g.concat({zn.feats[0], zn.feats[1], zn.feats[2]}, {3 * c});

  std::vector<int64_t> active;
  for (int64_t r = 0; r < 3; ++r)
    if (zn.enabled[static_cast<size_t>(r)]) active.push_back(r);

  GateOut out;
  out.weights = {0.0, 0.0, 0.0};

  if (active.size() == 1) {
    out.fused = zn.feats[static_cast<size_t>(active[0])];
    out.weights[static_cast<size_t>(active[0])] = 1.0;
    return out;
  }

  const Tensor logits = gate_logits(g, P, t, zcat);
  Tensor w;
  if (active.size() == 3) {
    w = g.softmax(logits, 0);
  } else {
    // Disabled zones are forced to weight 0; the softmax renormalizes over
    // the remaining logits.
    w = g.softmax(g.gather(logits, active), 0);
  }
  bool first = true;
  for (size_t a = 0; a < active.size(); ++a) {
    const int64_t r = active[a];
    out.weights[static_cast<size_t>(r)] = w[static_cast<int64_t>(a)];
    const Tensor term =
        g.mul(zn.feats[static_cast<size_t>(r)],
              g.gather(w, {static_cast<int64_t>(a)}));
    out.fused = first ? term : g.add(out.fused, term);
    first = false;
  }
  return out;
}

}  // namespace

ag::Tensor head_raw(Graph& g, const BoundParams& P, const ModelConfig& cfg,
                    Task t, const ag::Tensor& fused, bool train_mode,
                    uint64_t dropout_seed) {
  const std::string tn = task_name(t);
  const Tensor hidden = g.relu(g.matvec(P["head." + tn + ".w1"], fused));
  const Tensor dropped =
      g.dropout(hidden, cfg.dropout_keep, train_mode,
                rng::mix(dropout_seed, static_cast<uint64_t>(t)));
  return g.matvec(P["head." + tn + ".w2"], dropped);  // [1]
}

ForwardResult forward(Graph& g, const data::LabeledCase& c,
                      const BoundParams& P, const ModelConfig& cfg,
                      bool train_mode, uint64_t dropout_seed,
                      const ZoneMasks* zones) {
  cfg.validate();
  if (c.volume.dims != cfg.dims)
    throw DataError("forward: case dims " + c.volume.dims.str() +
                    " do not match model dims " + cfg.dims.str());
  if (c.volume.dims != c.mask.dims)
    throw DataError("forward: volume dims " + c.volume.dims.str() +
                    " differ from mask dims " + c.mask.dims.str());

  ZoneMasks local;
  if (!zones) {
    local = prepare_zones(c.mask, cfg.downsample());
    zones = &local;
  }

  const Tensor vol = g.leaf(volume_to_tensor(c.volume));

  ForwardResult res;
  res.pred.zone_fallback = zones->core_fallback;

  const bool shared = cfg.ablation.shared_backbone;
  Tensor shared_fsp;
  AttentionOut shared_attn;
  ZoneNodes shared_zones;
  if (shared) {
    const Tensor feat = backbone_forward(g, P, cfg, vol, "");
    shared_attn = attention_forward(g, P, cfg, feat, "");
    shared_zones = pool_zones(g, shared_attn.modulated, *zones, cfg);
  }

  Tensor attn_accum;  // plain value; averaged over owners when not shared
  int attn_owners = 0;

  for (Task t : kAllTasks) {
    ZoneNodes zn;
    if (shared) {
      zn = shared_zones;
      if (attn_owners == 0) {
        attn_accum = shared_attn.map;
        attn_owners = 1;
      }
    } else {
      const std::string owner = task_name(t);
      const Tensor feat = backbone_forward(g, P, cfg, vol, owner);
      const AttentionOut attn = attention_forward(g, P, cfg, feat, owner);
      zn = pool_zones(g, attn.modulated, *zones, cfg);
      if (attn_owners == 0) {
        attn_accum = attn.map;
      } else {
        for (int64_t i = 0; i < attn_accum.numel(); ++i)
          attn_accum.data[static_cast<size_t>(i)] += attn.map[i];
      }
      ++attn_owners;
    }

    const GateOut gate = gate_and_fuse(g, P, cfg, t, zn);
    res.pred.gates[static_cast<size_t>(t)] = gate.weights;
    const Tensor raw =
        head_raw(g, P, cfg, t, gate.fused, train_mode, dropout_seed);

    switch (t) {
      case Task::Er:
        res.nodes.p_er = g.sigmoid(raw);
        res.pred.p_er = res.nodes.p_er[0];
        break;
      case Task::Pr:
        res.nodes.p_pr = g.sigmoid(raw);
        res.pred.p_pr = res.nodes.p_pr[0];
        break;
      case Task::Her2:
        res.nodes.p_her2 = g.sigmoid(raw);
        res.pred.p_her2 = res.nodes.p_her2[0];
        break;
      case Task::Ki67:
        res.nodes.ki67_raw = raw;
        res.pred.ki67_raw = raw[0];
        res.pred.ki67 = std::clamp(raw[0], 0.0, 1.0);
        break;
    }
  }

  // Attention map reported at feature resolution, [D', H', W'].
  Tensor amap = attn_accum;
  amap.node = -1;
  if (attn_owners > 1)
    for (double& v : amap.data) v /= static_cast<double>(attn_owners);
  if (amap.shape.size() == 4)
    amap.shape = Shape(amap.shape.begin() + 1, amap.shape.end());
  res.pred.attention = std::move(amap);
  return res;
}

Prediction forward_eval(const data::LabeledCase& c, const ParamSet& params,
                        const ModelConfig& cfg, const ZoneMasks* zones) {
  Graph g;
  const BoundParams P = bind_params(g, params);
  return forward(g, c, P, cfg, false, 0, zones).pred;
}

ag::Tensor joint_loss_node(Graph& g, const ForwardNodes& nodes,
                           const data::BiomarkerLabels& labels,
                           std::optional<Task> single_task) {
  data::validate_labels(labels);
  auto ce = [&](const Tensor& p, int y) {
    return g.binary_cross_entropy(
        p, g.leaf(Tensor::scalar(static_cast<double>(y))));
  };
  auto mse = [&] {
    return g.scale(
        g.squared_error(nodes.ki67_raw, g.leaf(Tensor::scalar(labels.ki67))),
        0.1);
  };
  if (single_task) {
    switch (*single_task) {
      case Task::Er: return ce(nodes.p_er, labels.er);
      case Task::Pr: return ce(nodes.p_pr, labels.pr);
      case Task::Her2: return ce(nodes.p_her2, labels.her2);
      case Task::Ki67: return mse();
    }
  }
  const Tensor cls = g.add(g.add(ce(nodes.p_er, labels.er),
                                 ce(nodes.p_pr, labels.pr)),
                           ce(nodes.p_her2, labels.her2));
  return g.add(cls, mse());
}

double joint_loss(const Prediction& pred, const data::BiomarkerLabels& labels) {
  data::validate_labels(labels);
  auto ce = [](double p, int y) {
    const double ph = std::clamp(p, ag::kBceClamp, 1.0 - ag::kBceClamp);
    return -(y * std::log(ph) + (1 - y) * std::log(1.0 - ph));
  };
  const double dki = pred.ki67_raw - labels.ki67;
  return ce(pred.p_er, labels.er) + ce(pred.p_pr, labels.pr) +
         ce(pred.p_her2, labels.her2) + 0.1 * dki * dki;
}

const char* subtype_name(Subtype s) {
  switch (s) {
    case Subtype::LuminalA: return "LuminalA";
    case Subtype::LuminalB: return "LuminalB";
    case Subtype::Her2Enriched: return "HER2-enriched";
    case Subtype::TripleNegative: return "TripleNegative";
  }
  return "?";
}

Subtype subtype_from_biomarkers(const data::BiomarkerLabels& labels) {
  data::validate_labels(labels);
  const bool hr = labels.er == 1 || labels.pr == 1;
  if (hr) {
    if (labels.her2 == 0 && labels.ki67 < 0.20) return Subtype::LuminalA;
    return Subtype::LuminalB;
  }
  return labels.her2 == 1 ? Subtype::Her2Enriched : Subtype::TripleNegative;
}

namespace {

json ablation_to_json(const AblationSpec& a) {
  json j;
  j["attention"] = a.attention;
  j["multiscale"] = a.multiscale;
  j["use_rim"] = a.use_rim;
  j["use_peri"] = a.use_peri;
  j["shared_backbone"] = a.shared_backbone;
  j["single_task"] =
      a.single_task ? json(task_name(*a.single_task)) : json(nullptr);
  return j;
}

AblationSpec ablation_from_json(const json& j) {
  AblationSpec a;
  a.attention = j.at("attention").get<bool>();
  a.multiscale = j.at("multiscale").get<bool>();
  a.use_rim = j.at("use_rim").get<bool>();
  a.use_peri = j.at("use_peri").get<bool>();
  a.shared_backbone = j.at("shared_backbone").get<bool>();
  if (!j.at("single_task").is_null())
    a.single_task = parse_task(j.at("single_task").get<std::string>());
  return a;
}

json config_to_json(const ModelConfig& cfg) {
  json j;
  j["dims"] = {cfg.dims.h, cfg.dims.w, cfg.dims.d};
  j["stage_channels"] = cfg.stage_channels;
  j["attention_radii"] = cfg.attention_radii;
  j["head_hidden"] = cfg.head_hidden;
  j["dropout_keep"] = cfg.dropout_keep;
  j["seed"] = cfg.seed;
  j["ablation"] = ablation_to_json(cfg.ablation);
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.dims = {j.at("dims").at(0).get<int>(), j.at("dims").at(1).get<int>(),
              j.at("dims").at(2).get<int>()};
  cfg.stage_channels = j.at("stage_channels").get<std::vector<int>>();
  cfg.attention_radii = j.at("attention_radii").get<std::vector<int>>();
  cfg.head_hidden = j.at("head_hidden").get<int>();
  cfg.dropout_keep = j.at("dropout_keep").get<double>();
  cfg.seed = j.at("seed").get<uint64_t>();
  cfg.ablation = ablation_from_json(j.at("ablation"));
  return cfg;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params,
                     const ModelConfig& cfg, int epoch) {
  json header;
  header["format_version"] = 1;
  header["epoch"] = epoch;
  header["model"] = config_to_json(cfg);
  json table = json::array();
  for (const auto& [name, t] : params.entries) {
    json e;
    e["name"] = name;
    e["shape"] = t.shape;
    table.push_back(e);
  }
  header["params"] = table;

  std::string bytes = header.dump() + "\n";
  const size_t header_size = bytes.size();
  size_t total = 0;
  for (const auto& [name, t] : params.entries) total += t.data.size();
  bytes.resize(header_size + total * sizeof(double));
  size_t off = header_size;
  for (const auto& [name, t] : params.entries) {
    std::memcpy(bytes.data() + off, t.data.data(),
                t.data.size() * sizeof(double));
    off += t.data.size() * sizeof(double);
  }
  data::write_file_atomic(path, bytes);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing checkpoint: " + path.string());
  std::string header_line;
  if (!std::getline(in, header_line))
    throw DataError("checkpoint has no header: " + path.string());

  Checkpoint ck;
  try {
    const json header = json::parse(header_line);
    ck.epoch = header.at("epoch").get<int>();
    ck.config = config_from_json(header.at("model"));
    for (const auto& e : header.at("params")) {
      const std::string name = e.at("name").get<std::string>();
      const Shape shape = e.at("shape").get<Shape>();
      ck.params.entries.emplace_back(name, Tensor(shape));
    }
  } catch (const json::exception& e) {
    throw DataError("bad checkpoint header in " + path.string() + ": " +
                    e.what());
  }

  for (auto& [name, t] : ck.params.entries) {
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!in)
      throw DataError("checkpoint truncated at parameter " + name + " in " +
                      path.string());
  }
  return ck;
}

}  // namespace smtl::model
