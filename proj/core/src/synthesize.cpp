#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>

#include "sgen/driving.hpp"
#include "sgen/error.hpp"
#include "sgen/scenario.hpp"

namespace sgen {

namespace {

constexpr double kLaneWidth = 3.5;

struct Crossing {
  int other = -1;
  double s_self = 0.0;
  double s_other = 0.0;
  bool yield = false;
};

struct ScriptedDriver {
  Path path;
  IdmParams idm;
  double curve_accel = 2.5;  // m/s^2 lateral limit for curve speed
  bool parked = false;
  // Parked drivers start once this predicate on the ego becomes true.
  double go_when_ego_x_beyond = std::numeric_limits<double>::infinity();
  std::vector<Crossing> crossings;
};

struct Draft {
  Scenario scenario;  // map and initial states only
  std::vector<ScriptedDriver> drivers;
};

std::vector<Vec2> line(Vec2 a, Vec2 b, double spacing = 5.0) {
  const double len = std::hypot(b.x - a.x, b.y - a.y);
  const int n = std::max(1, static_cast<int>(std::ceil(len / spacing)));
  std::vector<Vec2> pts;
  for (int i = 0; i <= n; ++i) {
    const double t = static_cast<double>(i) / n;
    pts.push_back({a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)});
  }
  return pts;
}

void append(std::vector<Vec2>& dst, const std::vector<Vec2>& src) {
  for (const Vec2& p : src) {
    if (!dst.empty() && std::hypot(p.x - dst.back().x, p.y - dst.back().y) < 1e-9) continue;
    dst.push_back(p);
  }
}

// Arc around `center` from angle a0 to a1 (radians), counter-clockwise when a1 > a0.
std::vector<Vec2> arc(Vec2 center, double radius, double a0, double a1, int pieces = 16) {
  std::vector<Vec2> pts;
  for (int i = 0; i <= pieces; ++i) {
    const double a = a0 + (a1 - a0) * i / pieces;
    pts.push_back({center.x + radius * std::cos(a), center.y + radius * std::sin(a)});
  }
  return pts;
}

std::optional<std::pair<double, double>> first_crossing(const Path& p, const Path& q) {
  const auto& a = p.points();
  const auto& b = q.points();
  double sa = 0.0;
  for (std::size_t i = 0; i + 1 < a.size(); ++i) {
    const double la = std::hypot(a[i + 1].x - a[i].x, a[i + 1].y - a[i].y);
    double sb = 0.0;
    for (std::size_t j = 0; j + 1 < b.size(); ++j) {
      const double lb = std::hypot(b[j + 1].x - b[j].x, b[j + 1].y - b[j].y);
      const double rx = a[i + 1].x - a[i].x, ry = a[i + 1].y - a[i].y;
      const double qx = b[j + 1].x - b[j].x, qy = b[j + 1].y - b[j].y;
      const double den = rx * qy - ry * qx;
      if (std::abs(den) > 1e-9) {
        const double wx = b[j].x - a[i].x, wy = b[j].y - a[i].y;
        const double t = (wx * qy - wy * qx) / den;
        const double u = (wx * ry - wy * rx) / den;
        if (t >= 0.0 && t <= 1.0 && u >= 0.0 && u <= 1.0) {
          return std::make_pair(sa + t * la, sb + u * lb);
        }
      }
      sb += lb;
    }
    sa += la;
  }
  return std::nullopt;
}

AgentState vehicle(std::mt19937_64& rng, double x, double y, double theta, double v) {
  std::uniform_real_distribution<double> len(4.2, 5.0);
  std::uniform_real_distribution<double> wid(1.8, 2.0);
  AgentState s;
  s.x = x;
  s.y = y;
  s.theta = wrap_angle(theta);
  s.v = v;
  s.length = len(rng);
  s.width = wid(rng);
  return s;
}

ScriptedDriver driver(std::vector<Vec2> pts, double desired_speed) {
  ScriptedDriver d;
  d.path = Path(std::move(pts));
  d.idm.desired_speed = desired_speed;
  return d;
}

// Places `count` extra vehicles on the given lanes at slots that keep 14 m of
// longitudinal clearance from every vehicle already on that lane.
struct LaneSlot {
  std::vector<Vec2> path;
  double heading;
  Vec2 origin;  // lane point with arc length 0 along `path` direction
  double s_min;
  double s_max;
};

void add_background(Draft& d, std::mt19937_64& rng, const std::vector<LaneSlot>& lanes,
                    int count, double vmin, double vmax) {
  std::uniform_int_distribution<std::size_t> pick_lane(0, lanes.size() - 1);
  std::uniform_real_distribution<double> speed(vmin, vmax);
  int placed = 0;
  for (int attempt = 0; attempt < 200 && placed < count; ++attempt) {
    const LaneSlot& lane = lanes[pick_lane(rng)];
    std::uniform_real_distribution<double> pos(lane.s_min, lane.s_max);
    const double s = pos(rng);
    const Vec2 p{lane.origin.x + s * std::cos(lane.heading),
                 lane.origin.y + s * std::sin(lane.heading)};
    bool clear = true;
    for (const Track& tr : d.scenario.agents) {
      if (std::hypot(tr[0].x - p.x, tr[0].y - p.y) < 14.0) clear = false;
    }
    if (!clear) continue;
    const double v = speed(rng);
    d.scenario.agents.push_back({vehicle(rng, p.x, p.y, lane.heading, v)});
    d.drivers.push_back(driver(lane.path, v));
    ++placed;
  }
}

MapPolyline poly(PolylineKind kind, std::vector<Vec2> pts) { return {kind, std::move(pts)}; }

Draft parallel_driving(const ScenarioArchetype& a, std::mt19937_64& rng) {
  Draft d;
  auto& map = d.scenario.map;
  const auto lane0 = line({-120, 0}, {420, 0});
  const auto lane1 = line({-120, kLaneWidth}, {420, kLaneWidth});
  map.push_back(poly(PolylineKind::kLaneCenter, lane0));
  map.push_back(poly(PolylineKind::kLaneCenter, lane1));
  map.push_back(poly(PolylineKind::kRoadEdge, line({-120, -0.5 * kLaneWidth}, {420, -0.5 * kLaneWidth})));
  map.push_back(poly(PolylineKind::kRoadEdge, line({-120, 1.5 * kLaneWidth}, {420, 1.5 * kLaneWidth})));

  std::uniform_real_distribution<double> speed(a.min_speed, a.max_speed);
  std::uniform_real_distribution<double> offset(-5.0, 5.0);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  const double ve = speed(rng), vc = speed(rng);
  d.scenario.agents.push_back({vehicle(rng, 0.0, 0.0, 0.0, ve)});
  d.drivers.push_back(driver(lane0, ve + jitter(rng)));
  d.scenario.agents.push_back({vehicle(rng, offset(rng), kLaneWidth, 0.0, vc)});
  d.drivers.push_back(driver(lane1, vc + jitter(rng)));

  std::uniform_int_distribution<int> nbg(a.min_background, a.max_background);
  add_background(d, rng,
                 {{lane0, 0.0, {0, 0}, -60.0, 90.0}, {lane1, 0.0, {0, kLaneWidth}, -60.0, 90.0}},
                 nbg(rng), a.min_speed - 1.0, a.max_speed + 1.0);
  return d;
}

// Cross road at x = xc: northbound lane x = xc + w/2, southbound x = xc - w/2.
void add_cross_road(std::vector<MapPolyline>& map, double xc) {
  const double h = 0.5 * kLaneWidth;
  map.push_back(poly(PolylineKind::kLaneCenter, line({xc + h, -150}, {xc + h, 150})));
  map.push_back(poly(PolylineKind::kLaneCenter, line({xc - h, 150}, {xc - h, -150})));
  map.push_back(poly(PolylineKind::kRoadEdge, line({xc + 2 * h, -150}, {xc + 2 * h, -h - 2})));
  map.push_back(poly(PolylineKind::kRoadEdge, line({xc - 2 * h, -150}, {xc - 2 * h, -h - 2})));
  map.push_back(poly(PolylineKind::kRoadEdge, line({xc + 2 * h, 3 * h + 2}, {xc + 2 * h, 150})));
  map.push_back(poly(PolylineKind::kRoadEdge, line({xc - 2 * h, 3 * h + 2}, {xc - 2 * h, 150})));
  map.push_back(poly(PolylineKind::kCrosswalk, line({xc - 2 * h - 3, -h}, {xc - 2 * h - 3, 3 * h})));
  map.push_back(poly(PolylineKind::kCrosswalk, line({xc + 2 * h + 3, -h}, {xc + 2 * h + 3, 3 * h})));
}

// Two-lane east-west road: eastbound y = 0, westbound y = lane width.
void add_main_road(std::vector<MapPolyline>& map, std::optional<double> gap_at) {
  const double h = 0.5 * kLaneWidth;
  map.push_back(poly(PolylineKind::kLaneCenter, line({-120, 0}, {320, 0})));
  map.push_back(poly(PolylineKind::kLaneCenter, line({320, kLaneWidth}, {-120, kLaneWidth})));
  if (gap_at) {
    const double xc = *gap_at;
    map.push_back(poly(PolylineKind::kRoadEdge, line({-120, -h}, {xc - 2 * h - 2, -h})));
    map.push_back(poly(PolylineKind::kRoadEdge, line({xc + 2 * h + 2, -h}, {320, -h})));
    map.push_back(poly(PolylineKind::kRoadEdge, line({-120, 3 * h}, {xc - 2 * h - 2, 3 * h})));
    map.push_back(poly(PolylineKind::kRoadEdge, line({xc + 2 * h + 2, 3 * h}, {320, 3 * h})));
  } else {
    map.push_back(poly(PolylineKind::kRoadEdge, line({-120, -h}, {320, -h})));
    map.push_back(poly(PolylineKind::kRoadEdge, line({-120, 3 * h}, {320, 3 * h})));
  }
}

Draft unprotected_intersection(const ScenarioArchetype& a, std::mt19937_64& rng) {
  Draft d;
  std::uniform_real_distribution<double> where(30.0, 45.0);
  const double xc = where(rng);
  add_main_road(d.scenario.map, xc);
  add_cross_road(d.scenario.map, xc);
  const double xn = xc + 0.5 * kLaneWidth;
  const auto east = line({-120, 0}, {320, 0});
  const auto north = line({xn, -150}, {xn, 150});
  const auto west = line({320, kLaneWidth}, {-120, kLaneWidth});

  std::uniform_real_distribution<double> speed(a.min_speed, a.max_speed);
  std::bernoulli_distribution cbv_first(0.5);
  std::uniform_real_distribution<double> lead(2.5, 3.5);
  std::uniform_real_distribution<double> lag(1.5, 3.0);
  const double ve = speed(rng), vc = speed(rng);
  const double t_ego = xn / ve;
  const double t_cbv = cbv_first(rng) ? std::max(1.0, t_ego - lead(rng)) : t_ego + lag(rng);
  d.scenario.agents.push_back({vehicle(rng, 0.0, 0.0, 0.0, ve)});
  d.drivers.push_back(driver(east, ve));
  d.scenario.agents.push_back({vehicle(rng, xn, -vc * t_cbv, 0.5 * kPi, vc)});
  d.drivers.push_back(driver(north, vc));

  std::uniform_int_distribution<int> nbg(a.min_background, a.max_background);
  add_background(d, rng,
                 {{east, 0.0, {0, 0}, -70.0, -12.0},
                  {west, kPi, {xc - 15.0, kLaneWidth}, 0.0, 60.0},
                  {north, 0.5 * kPi, {xn, -vc * t_cbv}, -50.0, -12.0}},
                 nbg(rng), a.min_speed - 1.0, a.max_speed);
  return d;
}

Draft pull_out(const ScenarioArchetype& a, std::mt19937_64& rng) {
  Draft d;
  const double h = 0.5 * kLaneWidth;
  const double curb_y = -3.0;
  auto& map = d.scenario.map;
  map.push_back(poly(PolylineKind::kLaneCenter, line({-120, 0}, {320, 0})));
  map.push_back(poly(PolylineKind::kLaneCenter, line({320, kLaneWidth}, {-120, kLaneWidth})));
  map.push_back(poly(PolylineKind::kLaneCenter, line({-120, curb_y}, {320, curb_y})));
  map.push_back(poly(PolylineKind::kRoadEdge, line({-120, curb_y - h}, {320, curb_y - h})));
  map.push_back(poly(PolylineKind::kRoadEdge, line({-120, 3 * h}, {320, 3 * h})));
  const auto east = line({-120, 0}, {320, 0});
  const auto west = line({320, kLaneWidth}, {-120, kLaneWidth});

  std::uniform_real_distribution<double> speed(a.min_speed, a.max_speed);
  std::bernoulli_distribution cbv_first(0.5);
  const bool early = cbv_first(rng);
  std::uniform_real_distribution<double> park_near(18.0, 30.0);
  std::uniform_real_distribution<double> park_far(45.0, 60.0);
  const double xp = early ? park_far(rng) : park_near(rng);
  const double ve = speed(rng);

  // Merge: 3 m straight, then a cosine blend into the travel lane over 18 m.
  std::vector<Vec2> merge = line({xp, curb_y}, {xp + 3.0, curb_y}, 1.0);
  for (int i = 1; i <= 18; ++i) {
    const double t = i / 18.0;
    merge.push_back({xp + 3.0 + 18.0 * t, curb_y * 0.5 * (1.0 + std::cos(kPi * t))});
  }
  append(merge, line({xp + 21.0, 0.0}, {320.0, 0.0}));

  d.scenario.agents.push_back({vehicle(rng, 0.0, 0.0, 0.0, ve)});
  d.drivers.push_back(driver(east, ve));
  d.scenario.agents.push_back({vehicle(rng, xp, curb_y, 0.0, 0.0)});
  ScriptedDriver cbv = driver(merge, speed(rng));
  cbv.parked = true;
  cbv.go_when_ego_x_beyond = early ? -std::numeric_limits<double>::infinity() : xp + 14.0;
  d.drivers.push_back(cbv);

  std::uniform_int_distribution<int> nbg(a.min_background, a.max_background);
  add_background(d, rng,
                 {{east, 0.0, {0, 0}, -70.0, -12.0},
                  {east, 0.0, {0, 0}, xp + 25.0, xp + 90.0},
                  {west, kPi, {120.0, kLaneWidth}, 0.0, 140.0}},
                 nbg(rng), a.min_speed - 1.0, a.max_speed);
  return d;
}

Draft turning(const ScenarioArchetype& a, std::mt19937_64& rng) {
  Draft d;
  std::uniform_real_distribution<double> where(32.0, 45.0);
  std::uniform_real_distribution<double> radius(8.0, 12.0);
  const double xc = where(rng);
  const double r = radius(rng);
  add_main_road(d.scenario.map, xc);
  add_cross_road(d.scenario.map, xc);
  const double xs = xc - 0.5 * kLaneWidth;  // southbound lane
  const double x_turn = xs + r;
  std::vector<Vec2> turn = line({320, kLaneWidth}, {x_turn, kLaneWidth});
  append(turn, arc({x_turn, kLaneWidth - r}, r, 0.5 * kPi, kPi));
  append(turn, line({xs, kLaneWidth - r}, {xs, -150}));
  const auto east = line({-120, 0}, {320, 0});
  const auto west = line({320, kLaneWidth}, {-120, kLaneWidth});

  std::uniform_real_distribution<double> speed(a.min_speed, a.max_speed);
  std::uniform_real_distribution<double> turn_speed(6.0, 9.0);
  std::bernoulli_distribution cbv_first(0.5);
  std::uniform_real_distribution<double> lead(2.5, 3.5);
  std::uniform_real_distribution<double> lag(1.5, 3.0);
  const double ve = speed(rng), vc = turn_speed(rng);
  Path turn_path(turn);
  Path east_path(east);
  const auto cross = first_crossing(turn_path, east_path);
  const double ego_to_conflict = cross ? cross->second - 120.0 : xc;
  const double t_ego = ego_to_conflict / ve;
  const double t_cbv = cbv_first(rng) ? std::max(1.0, t_ego - lead(rng)) : t_ego + lag(rng);
  // Approximate the CBV's travel to the conflict point at its initial speed.
  const double cbv_arc_to_conflict = cross ? cross->first : 0.0;
  const double start_s = std::max(0.0, cbv_arc_to_conflict - vc * t_cbv);
  const Vec2 start = turn_path.point_at(start_s);

  d.scenario.agents.push_back({vehicle(rng, 0.0, 0.0, 0.0, ve)});
  d.drivers.push_back(driver(east, ve));
  d.scenario.agents.push_back({vehicle(rng, start.x, start.y, turn_path.heading_at(start_s), vc)});
  d.drivers.push_back(driver(turn, vc));

  std::uniform_int_distribution<int> nbg(a.min_background, a.max_background);
  add_background(d, rng,
                 {{east, 0.0, {0, 0}, -70.0, -12.0},
                  {west, kPi, {start.x, kLaneWidth}, -80.0, -14.0}},
                 nbg(rng), a.min_speed - 1.0, a.max_speed);
  return d;
}

double curve_speed_limit(const ScriptedDriver& d, double s, double lateral_accel) {
  double limit = std::numeric_limits<double>::infinity();
  const double h0 = d.path.heading_at(s);
  for (double ahead = 4.0; ahead <= 24.0; ahead += 4.0) {
    const double dh = std::abs(wrap_angle(d.path.heading_at(s + ahead) - h0));
    if (dh < 1e-3) continue;
    const double radius = ahead / dh;
    limit = std::min(limit, std::sqrt(lateral_accel * radius) + 0.15 * ahead);
  }
  return limit;
}

Control scripted_control(int i, const std::vector<ScriptedDriver>& drivers,
                         const std::vector<AgentState>& states, int ego, std::mt19937_64& rng,
                         const ScenarioArchetype& a) {
  const ScriptedDriver& d = drivers[i];
  const AgentState& me = states[i];
  if (d.parked && !(states[ego].x > d.go_when_ego_x_beyond)) {
    return {-1.0, 0.0};
  }
  const auto proj = d.path.project({me.x, me.y});
  const double lookahead = std::max(4.0, 0.8 * me.v);
  double yaw = me.v > 0.5 ? pure_pursuit_yaw_rate(me, d.path, lookahead) : 0.0;

  IdmParams idm = d.idm;
  idm.desired_speed = std::min(idm.desired_speed, curve_speed_limit(d, proj.s, d.curve_accel));
  double gap = -1.0, leader_v = 0.0;
  for (int j = 0; j < static_cast<int>(states.size()); ++j) {
    if (j == i) continue;
    const auto pj = d.path.project({states[j].x, states[j].y});
    if (pj.s <= proj.s || std::abs(pj.lateral) > 2.2) continue;
    const double g = pj.s - proj.s - 0.5 * (me.length + states[j].length);
    if (gap < 0.0 || g < gap) {
      gap = std::max(g, 0.05);
      leader_v = states[j].v * std::cos(wrap_angle(states[j].theta - me.theta));
    }
  }
  for (const Crossing& c : d.crossings) {
    if (!c.yield) continue;
    const ScriptedDriver& od = drivers[c.other];
    const AgentState& other = states[c.other];
    const double other_s = od.path.project({other.x, other.y}).s;
    const double clear = 0.5 * other.length + 0.5 * me.width + 3.0;
    if (other_s > c.s_other + clear) continue;  // other has cleared
    const double stop_s = c.s_self - (0.5 * me.length + 0.5 * other.width + 2.5);
    if (proj.s > stop_s + 0.5) continue;  // committed
    const double g = std::max(stop_s - proj.s, 0.05);
    if (gap < 0.0 || g < gap) {
      gap = g;
      leader_v = 0.0;
    }
  }
  double accel = idm_accel(me.v, gap, leader_v, idm);
  std::normal_distribution<double> na(0.0, a.accel_noise);
  std::normal_distribution<double> ny(0.0, a.yaw_rate_noise);
  const double noise_a = na(rng);
  const double noise_y = ny(rng);
  if (me.v > 1.0) {
    accel += noise_a;
    yaw += noise_y;
  }
  return {std::clamp(accel, -kAccelMax, kAccelMax), std::clamp(yaw, -kYawRateMax, kYawRateMax)};
}

void assign_crossings(Draft& d) {
  const int n = static_cast<int>(d.drivers.size());
  std::vector<double> arrival(n, std::numeric_limits<double>::infinity());
  std::vector<std::vector<std::pair<int, std::pair<double, double>>>> hits(n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const auto c = first_crossing(d.drivers[i].path, d.drivers[j].path);
      if (!c) continue;
      const auto& si = d.scenario.agents[i][0];
      const auto& sj = d.scenario.agents[j][0];
      const double s0i = d.drivers[i].path.project({si.x, si.y}).s;
      const double s0j = d.drivers[j].path.project({sj.x, sj.y}).s;
      if (c->first < s0i - 5.0 || c->second < s0j - 5.0) continue;  // already behind
      const double ti = d.drivers[i].parked ? 1e9 : (c->first - s0i) / std::max(si.v, 1.0);
      const double tj = d.drivers[j].parked ? 1e9 : (c->second - s0j) / std::max(sj.v, 1.0);
      const bool i_yields = ti > tj;
      d.drivers[i].crossings.push_back({j, c->first, c->second, i_yields});
      d.drivers[j].crossings.push_back({i, c->second, c->first, !i_yields});
    }
  }
}

Scenario roll_out(Draft d, const ScenarioArchetype& a, std::mt19937_64& rng) {
  assign_crossings(d);
  const int plan_steps = static_cast<int>(std::lround(a.duration / kPlanDt));
  const int n = d.scenario.agent_count();
  std::vector<AgentState> states = d.scenario.states_at(0);
  for (auto& tr : d.scenario.agents) tr.reserve(plan_steps * kSubstepsPerPlan + 1);
  for (int k = 0; k < plan_steps; ++k) {
    std::vector<Control> controls(n);
    for (int i = 0; i < n; ++i) {
      const Control c = scripted_control(i, d.drivers, states, d.scenario.ego_index, rng, a);
      controls[i] = detokenize(tokenize(c));
    }
    for (int sub = 0; sub < kSubstepsPerPlan; ++sub) {
      for (int i = 0; i < n; ++i) {
        states[i] = substep(states[i], controls[i], kSimDt);
        d.scenario.agents[i].push_back(states[i]);
      }
    }
  }
  return d.scenario;
}

bool log_is_clean(const Scenario& s) {
  for (int t = 0; t < s.duration_steps(); ++t) {
    for (int i = 0; i < s.agent_count(); ++i) {
      for (int j = i + 1; j < s.agent_count(); ++j) {
        const auto bi = box_of(s.agents[i][t]);
        const auto bj = box_of(s.agents[j][t]);
        if (std::hypot(bi.center.x - bj.center.x, bi.center.y - bj.center.y) > 12.0) continue;
        if (min_distance(bi, bj) <= 0.35) return false;
      }
    }
  }
  return true;
}

}  // namespace

Scenario synthesize(const ScenarioArchetype& archetype) {
  if (archetype.min_background < 0 || archetype.max_background < archetype.min_background ||
      archetype.min_speed < 0.0 || archetype.max_speed < archetype.min_speed ||
      archetype.duration <= 0.0) {
    throw Error(ErrorKind::kValidation, "synthesize: invalid archetype parameters");
  }
  constexpr int kAttempts = 64;
  Scenario last;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    std::mt19937_64 rng(archetype.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(attempt));
    Draft draft;
    switch (archetype.kind) {
      case ArchetypeKind::kParallelDriving: draft = parallel_driving(archetype, rng); break;
      case ArchetypeKind::kUnprotectedIntersection:
        draft = unprotected_intersection(archetype, rng);
        break;
      case ArchetypeKind::kPullOut: draft = pull_out(archetype, rng); break;
      case ArchetypeKind::kTurning: draft = turning(archetype, rng); break;
    }
    draft.scenario.ego_index = 0;
    draft.scenario.cbv_index = 1;
    last = roll_out(std::move(draft), archetype, rng);
    if (log_is_clean(last) && check_consistency(last).empty()) return last;
  }
  throw Error(ErrorKind::kValidation, std::string("synthesize: no collision-free log for ") +
                                          to_string(archetype.kind) + " seed " +
                                          std::to_string(archetype.seed));
}

}  // namespace sgen
