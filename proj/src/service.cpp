// Copyright 2026 The Macrid Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "macrid/service.hpp"

#include <algorithm>
#include <cmath>

#include "httplib.h"
#include "json.hpp"
#include "macrid/control.hpp"
#include "macrid/metrics.hpp"
#include "macrid/parallel.hpp"

namespace macrid {

using nlohmann::json;

namespace {

Response ok(const json& j) { return {200, j.dump()}; }

Response unavailable() {
  return error_response(503, "unavailable", "model is still loading");
}

std::optional<std::size_t> parse_count(const std::string& s) {
  if (s.empty() || s.size() > 9) return std::nullopt;
  std::size_t v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return std::nullopt;
    v = v * 10 + static_cast<std::size_t>(c - '0');
  }
  return v;
}

json trajectory_json(const ControlTrajectory& t, const ServiceState& s) {
  json items = json::array();
  for (std::size_t i = 0; i < t.items.size(); ++i) {
    items.push_back({{"id", s.items.id(t.items[i])},
                     {"index", t.items[i]},
                     {"dim_value", t.dim_values[i]}});
  }
  json out = {{"items", items},
              {"dim_values", t.dim_values},
              {"boundaries", t.boundaries},
              {"objective", t.objective},
              {"k_star", t.probe.k_star},
              {"eligible", t.eligible},
              {"probe",
               {{"lower", t.probe.lower},
                {"upper", t.probe.upper},
                {"bound", t.probe.bound},
                {"lower_clamped", t.probe.lower_clamped},
                {"upper_clamped", t.probe.upper_clamped}}}};
  out["value_bin"] = t.value_bin ? json(*t.value_bin) : json(nullptr);
  return out;
}

}  // namespace

Response error_response(int status, const std::string& code, const std::string& message) {
  return {status, json{{"error", code}, {"message", message}}.dump()};
}

std::shared_ptr<const ServiceState> ServiceState::build(Checkpoint ckpt,
                                                        const InteractionMatrix* corpus,
                                                        const SplitSpec* split) {
  auto s = std::make_shared<ServiceState>();
  s->params = std::move(ckpt.params);
  s->items = std::move(ckpt.items);
  s->assignment = infer_assignment(s->params);
  s->concept_counts.assign(s->params.k(), 0);
  for (std::size_t i = 0; i < s->params.m(); ++i)
    ++s->concept_counts[s->assignment.concept_of(static_cast<Index>(i))];
  if (corpus) {
    require(corpus->n_items() == s->params.m(), "service: corpus and checkpoint item counts differ");
    s->users = corpus->user_vocab();
    for (std::size_t u = 0; u < corpus->n_users(); ++u) {
      const auto row = corpus->row(static_cast<Index>(u));
      std::vector<Index> items(row.begin(), row.end());
      if (split) {
        const auto it = split->foldin.find(static_cast<Index>(u));
        if (it != split->foldin.end()) items = it->second;
      }
      s->user_items.push_back(std::move(items));
    }
    s->user_mu.resize(s->user_items.size());
    parallel_for(s->user_items.size(), [&](std::size_t u) {
      s->user_mu[u] = encode_user(std::span<const Index>(s->user_items[u]), s->assignment,
                                  s->params, Mode::kInfer, nullptr)
                          .mu;
    });
  }
  return s;
}

std::vector<std::pair<Index, double>> concept_neighbors(const ModelParams& params,
                                                        const ConceptAssignment& c, Index item,
                                                        std::size_t n) {
  const std::size_t k = c.concept_of(item);
  const auto h = params.item_reps.row(item);
  std::vector<std::pair<Index, double>> all;
  for (std::size_t i = 0; i < params.m(); ++i) {
    const auto idx = static_cast<Index>(i);
    if (idx == item || c.concept_of(idx) != k) continue;
    all.emplace_back(idx, cosine(h, params.item_reps.row(i)));
  }
  const std::size_t take = std::min(n, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(),
                    [](const auto& a, const auto& b) {
                      return a.second != b.second ? a.second > b.second : a.first < b.first;
                    });
  all.resize(take);
  return all;
}

Response Service::meta() const {
  const auto s = state();
  if (!s) return unavailable();
  return ok({{"M", s->params.m()},
             {"K", s->params.k()},
             {"d", s->params.d()},
             {"tau", s->params.tau},
             {"sigma0", s->params.sigma0},
             {"similarity", to_string(s->params.similarity)},
             {"concept_counts", s->concept_counts},
             {"users", s->users.size()}});
}

Response Service::neighbors(const std::string& item_id, std::optional<std::string> n) const {
  const auto s = state();
  if (!s) return unavailable();
  const auto item = s->items.find(item_id);
  if (!item) return error_response(404, "not_found", "unknown item '" + item_id + "'");
  std::size_t count = 10;
  if (n) {
    const auto v = parse_count(*n);
    if (!v || *v == 0) return error_response(400, "bad_request", "n must be a positive integer");
    count = *v;
  }
  json list = json::array();
  for (const auto& [i, sim] : concept_neighbors(s->params, s->assignment, *item, count))
    list.push_back({{"id", s->items.id(i)}, {"index", i}, {"similarity", sim}});
  return ok({{"item", item_id},
             {"index", *item},
             {"concept", s->assignment.concept_of(*item)},
             {"neighbors", list}});
}

Response Service::control(const std::string& body) const {
  const auto s = state();
  if (!s) return unavailable();
  json req;
  try {
    req = json::parse(body);
  } catch (const json::parse_error& e) {
    return error_response(400, "bad_request", std::string("invalid JSON: ") + e.what());
  }
  if (!req.is_object()) return error_response(400, "bad_request", "body must be a JSON object");
  ControlQuery q;
  try {
    const json& a = req.at("anchor");
    if (a.is_string() || (a.is_object() && a.contains("item"))) {
      const std::string id = a.is_string() ? a.get<std::string>() : a.at("item").get<std::string>();
      const auto item = s->items.find(id);
      if (!item) return error_response(400, "bad_anchor", "unknown anchor item '" + id + "'");
      q.anchor = item_anchor(s->params, *item);
    } else if (a.is_object() && a.contains("user")) {
      const std::string id = a.at("user").get<std::string>();
      const auto user = s->users.find(id);
      if (!user) return error_response(400, "bad_anchor", "unknown anchor user '" + id + "'");
      const auto k = a.at("concept").get<std::size_t>();
      if (k >= s->params.k()) return error_response(400, "bad_anchor", "concept out of range");
      const auto r = s->user_mu[*user].row(k);
      q.anchor.assign(r.begin(), r.end());
    } else {
      return error_response(400, "bad_anchor", "anchor must name an item or a user component");
    }
    const json& dim = req.at("dim");
    if (!dim.is_number_integer() || dim.get<long long>() < 0 ||
        dim.get<long long>() >= static_cast<long long>(s->params.d())) {
      return error_response(400, "bad_dim",
                            "dim must be an integer in 0.." + std::to_string(s->params.d() - 1));
    }
    q.dim = dim.get<std::size_t>();
    if (req.contains("b")) q.b = req["b"].get<std::size_t>();
    if (req.contains("gamma")) q.gamma = req["gamma"].get<double>();
    if (req.contains("beam")) q.beam_width = req["beam"].get<std::size_t>();
    if (req.contains("value") && !req["value"].is_null()) q.value = req["value"].get<double>();
  } catch (const json::exception& e) {
    return error_response(400, "bad_request", e.what());
  }
  try {
    return ok(trajectory_json(select_trajectory(q, s->params), *s));
  } catch (const InsufficientItemsError& e) {
    json j = {{"error", "insufficient_items"},
              {"message", e.what()},
              {"eligible", e.eligible()},
              {"required", e.required()}};
    return {422, j.dump()};
  } catch (const Error& e) {
    return error_response(400, "bad_request", e.what());
  }
}

Response Service::components(const std::string& user_id) const {
  const auto s = state();
  if (!s) return unavailable();
  const auto user = s->users.find(user_id);
  if (!user) return error_response(404, "not_found", "unknown user '" + user_id + "'");
  const auto& items = s->user_items[*user];
  const auto conf = component_confidence(s->assignment, items);
  json comps = json::array();
  for (std::size_t k = 0; k < s->params.k(); ++k) {
    const auto r = s->user_mu[*user].row(k);
    comps.push_back({{"concept", k},
                     {"confidence", conf[k]},
                     {"mu", std::vector<double>(r.begin(), r.end())}});
  }
  return ok({{"user", user_id}, {"items", items.size()}, {"components", comps}});
}

void mount(httplib::Server& server, const Service& service) {
  const auto send = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  server.Get("/meta", [&service, send](const httplib::Request&, httplib::Response& res) {
    send(res, service.meta());
  });
  server.Get(R"(/items/([^/]+)/neighbors)",
             [&service, send](const httplib::Request& req, httplib::Response& res) {
               std::optional<std::string> n;
               if (req.has_param("n")) n = req.get_param_value("n");
               send(res, service.neighbors(req.matches[1], n));
             });
  server.Post("/control", [&service, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.control(req.body));
  });
  server.Get(R"(/users/([^/]+)/components)",
             [&service, send](const httplib::Request& req, httplib::Response& res) {
               send(res, service.components(req.matches[1]));
             });
  server.set_error_handler([send](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) send(res, error_response(res.status, "not_found", "no such endpoint"));
  });
}

}  // namespace macrid
