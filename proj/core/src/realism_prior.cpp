#include "sgen/realism_prior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "sgen/checkpoint.hpp"
#include "sgen/error.hpp"

namespace sgen {

namespace {

constexpr std::size_t kAgentFeatures = 5;
constexpr std::size_t kMapFeatures = 4;
constexpr const char* kSubLayers[] = {"temporal", "agent", "map"};

std::string layer_prefix(int layer, const char* sub) {
  return "L" + std::to_string(layer) + "." + sub;
}

Tensor2 normal_row(std::size_t n, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor2 t(1, n);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

std::array<double, kAgentFeatures> agent_features(const AgentInput& in) {
  return {in.state.v / 10.0, in.state.length / 5.0, in.state.width / 2.0,
          in.previous.accel / kAccelMax, in.previous.yaw_rate / kYawRateMax};
}

std::array<double, kMapFeatures> map_features(const MapSegment& s) {
  return {s.length() / kMapResampleSpacing, s.kind == PolylineKind::kLaneCenter ? 1.0 : 0.0,
          s.kind == PolylineKind::kRoadEdge ? 1.0 : 0.0,
          s.kind == PolylineKind::kCrosswalk ? 1.0 : 0.0};
}

Tensor2 descriptor_matrix(const MdaPairs& pairs) {
  return Tensor2(pairs.size(), kDescriptorFeatures, pairs.descriptors);
}

Var linear(const ParamBinder& bind, Var x, const std::string& w, const std::string& b) {
  return add_bias(matmul(x, bind(w)), bind(b));
}

// Key sets of the new rows for the three attention types.
struct ScenePairs {
  MdaPairs temporal;
  MdaPairs agent;
  MdaPairs map;
};

ScenePairs build_pairs(const PriorConfig& cfg, const PriorScene& scene, int first) {
  ScenePairs out;
  const int n = scene.agent_count;
  const int steps = static_cast<int>(scene.steps.size());
  std::vector<AgentState> states(static_cast<std::size_t>(n));
  for (MdaPairs* p : {&out.temporal, &out.agent, &out.map}) p->begin_query();
  for (int t = first; t < steps; ++t) {
    for (int i = 0; i < n; ++i) states[i] = scene.steps[t][i].state;
    for (int i = 0; i < n; ++i) {
      const AgentState& q = states[i];
      for (int tau = 1; tau <= std::min(cfg.history, t); ++tau) {
        const AgentState& src = scene.steps[t - tau][i].state;
        out.temporal.add((t - tau) * n + i,
                         descriptor_features(relative_descriptor(q, {src.x, src.y}, src.theta, tau)));
      }
      const Neighborhood nb =
          neighborhoods(states, i, scene.segments, cfg.agent_radius, cfg.map_radius);
      for (int j : nb.agents) {
        for (int tau = 0; tau <= std::min(cfg.history - 1, t); ++tau) {
          const AgentState& src = scene.steps[t - tau][j].state;
          out.agent.add((t - tau) * n + j, descriptor_features(relative_descriptor(
                                               q, {src.x, src.y}, src.theta, tau)));
        }
      }
      std::vector<std::pair<double, int>> near;
      for (int k : nb.segments) {
        const MapSegment& seg = scene.segments[k];
        near.emplace_back(point_segment_distance({q.x, q.y}, seg.a, seg.b), k);
      }
      if (cfg.map_keys > 0 && near.size() > static_cast<std::size_t>(cfg.map_keys)) {
        std::partial_sort(near.begin(), near.begin() + cfg.map_keys, near.end());
        near.resize(static_cast<std::size_t>(cfg.map_keys));
      }
      std::sort(near.begin(), near.end(),
                [](const auto& a, const auto& b) { return a.second < b.second; });
      for (const auto& [dist, k] : near) {
        const MapSegment& seg = scene.segments[k];
        out.map.add(k, descriptor_features(relative_descriptor(q, seg.midpoint(), seg.heading(), 0)));
      }
      for (MdaPairs* p : {&out.temporal, &out.agent, &out.map}) p->end_query();
    }
  }
  return out;
}

// Key sources: cached rows of earlier steps followed by the new rows.
Var with_cache(Tape& tape, const Tensor2* cached, Var fresh) {
  if (cached == nullptr || cached->rows() == 0) return fresh;
  const Var parts[] = {tape.constant(*cached), fresh};
  return concat_rows(parts);
}

void append_rows(Tensor2& dst, const Tensor2& rows) {
  if (dst.empty()) {
    dst = rows;
    return;
  }
  std::vector<double> data = dst.data();
  data.insert(data.end(), rows.data().begin(), rows.data().end());
  dst = Tensor2(dst.rows() + rows.rows(), dst.cols(), std::move(data));
}

}  // namespace

double lambda_init(int layer) {
  if (layer < 1) throw Error(ErrorKind::kConfiguration, "layer index starts at 1");
  // Same value as 0.8 - 0.6 exp(-0.3 (l - 1)), written so that l = 1 gives 0.2 exactly.
  return 0.2 - 0.6 * std::expm1(-0.3 * (layer - 1));
}

RelativeDescriptor relative_descriptor(const AgentState& query, Vec2 source,
                                       double source_heading, int dtau) {
  const double c = std::cos(query.theta), s = std::sin(query.theta);
  const double dx = source.x - query.x, dy = source.y - query.y;
  return {c * dx + s * dy, -s * dx + c * dy, wrap_angle(source_heading - query.theta), dtau};
}

std::array<double, kDescriptorFeatures> descriptor_features(const RelativeDescriptor& d) {
  const double dist = std::hypot(d.dx, d.dy);
  return {d.dx / 20.0,          d.dy / 20.0, std::sin(d.dtheta), std::cos(d.dtheta),
          d.dtau / 10.0,        dist / 20.0, std::exp(-dist / 5.0)};
}

nlohmann::json to_json(const PriorConfig& c) {
  return {{"width", c.width},       {"heads", c.heads},
          {"head_dim", c.head_dim}, {"layers", c.layers},
          {"history", c.history},   {"agent_radius", c.agent_radius},
          {"map_radius", c.map_radius}, {"map_keys", c.map_keys},
          {"seed", c.seed}};
}

PriorConfig prior_config_from_json(const nlohmann::json& j) {
  PriorConfig c;
  c.width = j.value("width", c.width);
  c.heads = j.value("heads", c.heads);
  c.head_dim = j.value("head_dim", c.head_dim);
  c.layers = j.value("layers", c.layers);
  c.history = j.value("history", c.history);
  c.agent_radius = j.value("agent_radius", c.agent_radius);
  c.map_radius = j.value("map_radius", c.map_radius);
  c.map_keys = j.value("map_keys", c.map_keys);
  c.seed = j.value("seed", c.seed);
  return c;
}

// ---------------------------------------------------------------- MDA

MdaWeights add_mda_weights(ParameterStore& store, const std::string& prefix, int width,
                           int heads, int head_dim, int layer, std::mt19937_64& rng) {
  const std::size_t w = static_cast<std::size_t>(width);
  const std::size_t qk = static_cast<std::size_t>(heads * head_dim);
  const std::size_t v = 2 * qk;
  store.add_xavier(prefix + ".wq1", w, qk, rng);
  store.add_xavier(prefix + ".wq2", w, qk, rng);
  store.add_xavier(prefix + ".wk1e", w, qk, rng);
  store.add_xavier(prefix + ".wk2e", w, qk, rng);
  store.add_xavier(prefix + ".wk1d", kDescriptorFeatures, qk, rng);
  store.add_xavier(prefix + ".wk2d", kDescriptorFeatures, qk, rng);
  store.add_xavier(prefix + ".wve", w, v, rng);
  store.add_xavier(prefix + ".wvd", kDescriptorFeatures, v, rng);
  store.add_xavier(prefix + ".wo", v, w, rng);
  const std::size_t d = static_cast<std::size_t>(head_dim);
  for (const char* name : {".lq1", ".lk1", ".lq2", ".lk2"}) {
    store.add(prefix + name, normal_row(d, 0.1, rng));
  }
  return find_mda_weights(store, prefix, heads, head_dim, layer);
}

MdaWeights find_mda_weights(const ParameterStore& store, const std::string& prefix, int heads,
                            int head_dim, int layer) {
  MdaWeights w;
  w.wq1 = &store.at(prefix + ".wq1");
  w.wq2 = &store.at(prefix + ".wq2");
  w.wk1e = &store.at(prefix + ".wk1e");
  w.wk2e = &store.at(prefix + ".wk2e");
  w.wk1d = &store.at(prefix + ".wk1d");
  w.wk2d = &store.at(prefix + ".wk2d");
  w.wve = &store.at(prefix + ".wve");
  w.wvd = &store.at(prefix + ".wvd");
  w.wo = &store.at(prefix + ".wo");
  w.lq1 = &store.at(prefix + ".lq1");
  w.lk1 = &store.at(prefix + ".lk1");
  w.lq2 = &store.at(prefix + ".lq2");
  w.lk2 = &store.at(prefix + ".lk2");
  w.lambda_init = lambda_init(layer);
  w.heads = heads;
  w.head_dim = head_dim;
  return w;
}

Var ParamBinder::operator()(const Parameter& p) const {
  // The trainable store owns every parameter handed out by its own lookups.
  if (trainable_ != nullptr) return tape_.param(const_cast<Parameter&>(p));
  return tape_.constant(p.value);
}

Var ParamBinder::operator()(const std::string& name) const {
  if (trainable_ != nullptr) return tape_.param(trainable_->at(name));
  return tape_.constant(frozen_->at(name).value);
}

MdaOutput mda(const ParamBinder& bind, const MdaWeights& w, Var queries, Var sources,
              const MdaPairs& pairs, const MdaOptions& options) {
  Tape& tape = bind.tape();
  const std::size_t heads = static_cast<std::size_t>(w.heads);
  if (pairs.segment_start.size() != queries.rows() + 1) {
    throw Error(ErrorKind::kShapeMismatch, "mda: one key segment per query required");
  }
  const Var desc = tape.constant(descriptor_matrix(pairs));
  auto keys = [&](const Parameter* we, const Parameter* wd) {
    return add(gather_rows(matmul(sources, bind(*we)), pairs.source), matmul(desc, bind(*wd)));
  };
  const Var q1 = matmul(queries, bind(*w.wq1));
  const Var q2 = matmul(queries, bind(*w.wq2));
  const Var k1 = keys(w.wk1e, w.wk1d);
  const Var k2 = keys(w.wk2e, w.wk2d);
  const Var v = keys(w.wve, w.wvd);
  const Var a1 = segment_attention(q1, k1, v, pairs.segment_start, heads);
  const Var a2 = segment_attention(q2, k2, v, pairs.segment_start, heads);

  Var lambda;
  if (options.zero_lambda) {
    lambda = tape.constant(Tensor2(1, 1, 0.0));
  } else {
    lambda = add_scalar(sub(exp(dot(bind(*w.lq1), bind(*w.lk1))),
                            exp(dot(bind(*w.lq2), bind(*w.lk2)))),
                        w.lambda_init);
  }
  const Var diff = sub(a1, scale_by(a2, lambda));
  const Var normed = options.head_norm
                         ? group_rms_norm(diff, 2 * static_cast<std::size_t>(w.head_dim),
                                          1.0 - w.lambda_init)
                         : diff;
  return {matmul(normed, bind(*w.wo)), diff, lambda};
}

// ---------------------------------------------------------------- scenes

PriorExample make_prior_example(const Scenario& s) {
  PriorExample ex;
  ex.scene.segments = map_segments(s.map);
  ex.scene.agent_count = s.agent_count();
  const int stride = kSubstepsPerPlan;
  const int transitions = (s.duration_steps() - 1) / stride;
  ex.targets.assign(static_cast<std::size_t>(transitions),
                    std::vector<int>(static_cast<std::size_t>(s.agent_count()), -1));
  ex.scene.steps.assign(static_cast<std::size_t>(transitions),
                        std::vector<AgentInput>(static_cast<std::size_t>(s.agent_count())));
  for (int i = 0; i < s.agent_count(); ++i) {
    const Track& track = s.agents[i];
    Control previous{};
    for (int t = 0; t < transitions; ++t) {
      const AgentState& a = track[t * stride];
      const AgentState& b = track[(t + 1) * stride];
      ex.scene.steps[t][i] = {a, previous};
      const MotionToken tok = recover_token(a, b, kPlanDt);
      const TransitionError err = transition_error(a, b, tok, kPlanDt);
      if (err.position <= 0.05 && err.heading <= 0.02) {
        ex.targets[t][i] = tok.index;
      } else {
        ++ex.skipped;
      }
      previous = detokenize(tok);
    }
  }
  return ex;
}

// ---------------------------------------------------------------- model

PriorModel::PriorModel(const PriorConfig& config) : config_(config) {
  if (config.width <= 0 || config.heads <= 0 || config.head_dim <= 0 || config.layers <= 0 ||
      config.history <= 0) {
    throw Error(ErrorKind::kConfiguration, "prior: widths, heads, layers must be positive");
  }
  std::mt19937_64 rng(config.seed);
  const std::size_t w = static_cast<std::size_t>(config.width);
  params_.add_xavier("enc.w1", kAgentFeatures, w, rng);
  params_.add_zeros("enc.b1", 1, w);
  params_.add_xavier("enc.w2", w, w, rng);
  params_.add_zeros("enc.b2", 1, w);
  params_.add_xavier("map.w1", kMapFeatures, w, rng);
  params_.add_zeros("map.b1", 1, w);
  params_.add_xavier("map.w2", w, w, rng);
  params_.add_zeros("map.b2", 1, w);
  for (int l = 1; l <= config.layers; ++l) {
    for (const char* sub : kSubLayers) {
      add_mda_weights(params_, layer_prefix(l, sub), config.width, config.heads,
                      config.head_dim, l, rng);
    }
    const std::string ffn = layer_prefix(l, "ffn");
    params_.add_xavier(ffn + ".w1", w, 2 * w, rng);
    params_.add_zeros(ffn + ".b1", 1, 2 * w);
    params_.add_xavier(ffn + ".w2", 2 * w, w, rng);
    params_.add_zeros(ffn + ".b2", 1, w);
  }
  params_.add_xavier("head.w", w, kVocabularySize, rng);
  params_.add_zeros("head.b", 1, kVocabularySize);
}

PriorModel::PriorModel(const PriorConfig& config, ParameterStore params) : PriorModel(config) {
  params_.copy_values_from(params);
}

void PriorModel::zero_head() {
  params_.at("head.w").value.fill(0.0);
  params_.at("head.b").value.fill(0.0);
}

void PriorModel::save(const std::filesystem::path& path, const nlohmann::json& meta) const {
  nlohmann::json m = meta.is_object() ? meta : nlohmann::json::object();
  m["kind"] = "prior";
  m["prior_config"] = to_json(config_);
  save_checkpoint(path, params_, m);
}

PriorModel PriorModel::load(const std::filesystem::path& path) {
  const nlohmann::json j = read_json_file(path);
  if (!j.contains("meta") || j["meta"].value("kind", "") != "prior") {
    throw Error(ErrorKind::kMalformedFile, path.string() + " is not a prior checkpoint");
  }
  PriorModel m(prior_config_from_json(j["meta"].at("prior_config")));
  params_from_json(j, m.params_);
  return m;
}

Var prior_logits(const ParamBinder& bind, const PriorModel& model, const PriorScene& scene,
                 PriorCache* cache) {
  Tape& tape = bind.tape();
  const PriorConfig& cfg = model.config();
  const ParameterStore& ps = model.params();
  const int n = scene.agent_count;
  const int first = cache != nullptr ? cache->steps : 0;
  const int steps = static_cast<int>(scene.steps.size());
  if (n <= 0 || steps <= first) {
    throw Error(ErrorKind::kShapeMismatch, "prior_logits: no new rows");
  }
  const std::size_t rows = static_cast<std::size_t>((steps - first) * n);

  Tensor2 feats(rows, kAgentFeatures);
  for (int t = first; t < steps; ++t) {
    if (static_cast<int>(scene.steps[t].size()) != n) {
      throw Error(ErrorKind::kShapeMismatch, "prior_logits: agent count changed");
    }
    for (int i = 0; i < n; ++i) {
      const auto f = agent_features(scene.steps[t][i]);
      std::copy(f.begin(), f.end(), &feats((t - first) * n + i, 0));
    }
  }
  Var x = linear(bind, gelu(linear(bind, tape.constant(std::move(feats)), "enc.w1", "enc.b1")),
                 "enc.w2", "enc.b2");

  ScenePairs pairs = build_pairs(cfg, scene, first);
  Var map_emb;
  if (pairs.map.size() > 0) {
    // Encode only the referenced segments and renumber the pairs accordingly.
    std::vector<int> used(pairs.map.source);
    std::sort(used.begin(), used.end());
    used.erase(std::unique(used.begin(), used.end()), used.end());
    for (int& src : pairs.map.source) {
      src = static_cast<int>(std::lower_bound(used.begin(), used.end(), src) - used.begin());
    }
    Tensor2 mf(used.size(), kMapFeatures);
    for (std::size_t k = 0; k < used.size(); ++k) {
      const auto f = map_features(scene.segments[used[k]]);
      std::copy(f.begin(), f.end(), &mf(k, 0));
    }
    map_emb = layer_norm(linear(
        bind, gelu(linear(bind, tape.constant(std::move(mf)), "map.w1", "map.b1")), "map.w2",
        "map.b2"));
  }

  if (cache != nullptr && cache->temporal_keys.empty()) {
    cache->temporal_keys.resize(static_cast<std::size_t>(cfg.layers));
    cache->agent_keys.resize(static_cast<std::size_t>(cfg.layers));
  }
  for (int l = 1; l <= cfg.layers; ++l) {
    const std::size_t li = static_cast<std::size_t>(l - 1);
    const MdaWeights wt = find_mda_weights(ps, layer_prefix(l, "temporal"), cfg.heads, cfg.head_dim, l);
    const MdaWeights wa = find_mda_weights(ps, layer_prefix(l, "agent"), cfg.heads, cfg.head_dim, l);
    const MdaWeights wm = find_mda_weights(ps, layer_prefix(l, "map"), cfg.heads, cfg.head_dim, l);

    const Var ht = layer_norm(x);
    if (pairs.temporal.size() > 0) {
      const Var src = with_cache(tape, cache ? &cache->temporal_keys[li] : nullptr, ht);
      x = add(x, mda(bind, wt, ht, src, pairs.temporal, model.options()).update);
    }
    const Var ha = layer_norm(x);
    if (pairs.agent.size() > 0) {
      const Var src = with_cache(tape, cache ? &cache->agent_keys[li] : nullptr, ha);
      x = add(x, mda(bind, wa, ha, src, pairs.agent, model.options()).update);
    }
    if (pairs.map.size() > 0) {
      const Var hm = layer_norm(x);
      x = add(x, mda(bind, wm, hm, map_emb, pairs.map, model.options()).update);
    }
    const std::string ffn = layer_prefix(l, "ffn");
    x = add(x, linear(bind, gelu(linear(bind, layer_norm(x), ffn + ".w1", ffn + ".b1")),
                      ffn + ".w2", ffn + ".b2"));
    if (cache != nullptr) {
      append_rows(cache->temporal_keys[li], ht.value());
      append_rows(cache->agent_keys[li], ha.value());
    }
  }
  if (cache != nullptr) cache->steps = steps;
  return linear(bind, layer_norm(x), "head.w", "head.b");
}

std::vector<double> decode_step(const PriorModel& model, const PriorScene& scene, int agent) {
  if (agent < 0 || agent >= scene.agent_count || scene.steps.empty()) {
    throw Error(ErrorKind::kShapeMismatch, "decode_step: bad agent or empty scene");
  }
  Tape tape;
  const ParamBinder bind(tape, model.params());
  const Var logits = prior_logits(bind, model, scene);
  const int row = (static_cast<int>(scene.steps.size()) - 1) * scene.agent_count + agent;
  const int idx[] = {row};
  const Var p = softmax_rows(gather_rows(logits, idx));
  return p.value().data();
}

PriorSession::PriorSession(const PriorModel& model, std::vector<MapSegment> segments,
                           int agent_count)
    : model_(&model) {
  scene_.segments = std::move(segments);
  scene_.agent_count = agent_count;
}

Tensor2 PriorSession::push(std::span<const AgentInput> step) {
  if (static_cast<int>(step.size()) != scene_.agent_count) {
    throw Error(ErrorKind::kShapeMismatch, "PriorSession: wrong agent count");
  }
  scene_.steps.emplace_back(step.begin(), step.end());
  Tape tape;
  const ParamBinder bind(tape, model_->params());
  const Var logits = prior_logits(bind, *model_, scene_, &cache_);
  return softmax_rows(logits).value();
}

MotionToken sample_token(std::span<const double> dist, std::mt19937_64& rng, SampleMode mode) {
  if (dist.size() != static_cast<std::size_t>(kVocabularySize)) {
    throw Error(ErrorKind::kShapeMismatch, "sample_token: distribution size");
  }
  if (mode == SampleMode::kArgmax) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < dist.size(); ++k) {
      if (dist[k] > dist[best]) best = k;
    }
    return MotionToken{static_cast<int>(best)};
  }
  const double total = std::accumulate(dist.begin(), dist.end(), 0.0);
  const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  double cum = 0.0;
  std::size_t last = 0;
  for (std::size_t k = 0; k < dist.size(); ++k) {
    if (dist[k] <= 0.0) continue;
    cum += dist[k];
    last = k;
    if (u < cum) return MotionToken{static_cast<int>(k)};
  }
  return MotionToken{static_cast<int>(last)};
}

// ---------------------------------------------------------------- training

nlohmann::json to_json(const TrainPriorConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_scenarios", c.batch_scenarios},
          {"learning_rate", c.learning_rate},
          {"grad_clip", c.grad_clip},
          {"seed", c.seed}};
}

TrainPriorConfig train_prior_config_from_json(const nlohmann::json& j) {
  TrainPriorConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_scenarios = j.value("batch_scenarios", c.batch_scenarios);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.seed = j.value("seed", c.seed);
  return c;
}

namespace {

struct RowTargets {
  std::vector<int> rows;
  std::vector<int> tokens;
};

RowTargets valid_targets(const PriorExample& ex) {
  RowTargets rt;
  const int n = ex.scene.agent_count;
  for (std::size_t t = 0; t < ex.targets.size(); ++t) {
    for (int i = 0; i < n; ++i) {
      if (ex.targets[t][i] < 0) continue;
      rt.rows.push_back(static_cast<int>(t) * n + i);
      rt.tokens.push_back(ex.targets[t][i]);
    }
  }
  return rt;
}

}  // namespace

Var prior_loss(const ParamBinder& bind, const PriorModel& model, const PriorExample& example) {
  const RowTargets rt = valid_targets(example);
  if (rt.rows.empty()) throw Error(ErrorKind::kEmptyDataset, "prior_loss: no valid targets");
  const Var logits = prior_logits(bind, model, example.scene);
  return cross_entropy(gather_rows(logits, rt.rows), rt.tokens);
}

PriorEvaluation evaluate_prior(const PriorModel& model, std::span<const PriorExample> examples) {
  PriorEvaluation ev;
  double nll = 0.0;
  int top1 = 0, top20 = 0;
  for (const PriorExample& ex : examples) {
    const RowTargets rt = valid_targets(ex);
    if (rt.rows.empty()) continue;
    Tape tape;
    const ParamBinder bind(tape, model.params());
    const Tensor2& logits = prior_logits(bind, model, ex.scene).value();
    for (std::size_t r = 0; r < rt.rows.size(); ++r) {
      const auto row = logits.row_span(static_cast<std::size_t>(rt.rows[r]));
      const double mx = *std::max_element(row.begin(), row.end());
      double z = 0.0;
      for (double v : row) z += std::exp(v - mx);
      const double target = row[static_cast<std::size_t>(rt.tokens[r])];
      nll += std::log(z) + mx - target;
      int better_or_tied_lower = 0;
      for (std::size_t k = 0; k < row.size(); ++k) {
        if (row[k] > target || (row[k] == target && static_cast<int>(k) < rt.tokens[r])) {
          ++better_or_tied_lower;
        }
      }
      top1 += better_or_tied_lower == 0;
      top20 += better_or_tied_lower < 20;
    }
    ev.targets += static_cast<int>(rt.rows.size());
  }
  if (ev.targets == 0) throw Error(ErrorKind::kEmptyDataset, "evaluate_prior: no targets");
  ev.nll = nll / ev.targets;
  ev.top1_accuracy = static_cast<double>(top1) / ev.targets;
  ev.top20_coverage = static_cast<double>(top20) / ev.targets;
  return ev;
}

PriorTrainReport train_prior(PriorModel& model, std::span<const PriorExample> train,
                             std::span<const PriorExample> validation,
                             const TrainPriorConfig& config) {
  if (train.empty()) throw Error(ErrorKind::kEmptyDataset, "train_prior: no scenarios");
  if (config.epochs <= 0 || config.batch_scenarios <= 0) {
    throw Error(ErrorKind::kConfiguration, "train_prior: epochs and batch must be positive");
  }
  PriorTrainReport report;
  for (const PriorExample& ex : train) report.skipped_transitions += ex.skipped;
  OptimizerState opt = make_optimizer_state(
      model.params(), {.learning_rate = config.learning_rate, .grad_clip = config.grad_clip});
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_scenarios) {
      const std::size_t e = std::min(order.size(), b + config.batch_scenarios);
      model.params().zero_grad();
      for (std::size_t k = b; k < e; ++k) {
        Tape tape;
        const ParamBinder bind(tape, model.params());
        const Var loss = prior_loss(bind, model, train[order[k]]);
        const double value = loss.value()(0, 0);
        if (!std::isfinite(value)) {
          throw Error(ErrorKind::kNonFinite,
                      "train_prior: non-finite loss at epoch " + std::to_string(epoch));
        }
        total += value;
        tape.backward(scale(loss, 1.0 / static_cast<double>(e - b)));
      }
      adam_step(model.params(), opt);
    }
    PriorEpochStats st;
    st.epoch = epoch;
    st.train_nll = total / static_cast<double>(train.size());
    st.validation_nll = validation.empty() ? std::numeric_limits<double>::quiet_NaN()
                                           : evaluate_prior(model, validation).nll;
    report.epochs.push_back(st);
  }
  return report;
}

}  // namespace sgen
