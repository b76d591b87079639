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

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "macrid/corpus.hpp"
#include "macrid/model.hpp"

namespace httplib {
class Server;
}

namespace macrid {

// Immutable snapshot served to request handlers.
struct ServiceState {
  ModelParams params;
  Vocabulary items;
  ConceptAssignment assignment;  // hard, infer mode
  std::vector<std::size_t> concept_counts;
  Vocabulary users;
  // Per user: the items the posterior is computed from (fold-in items for
  // held-out users, the full row otherwise) and the cached K x d means.
  std::vector<std::vector<Index>> user_items;
  std::vector<TensorD> user_mu;

  static std::shared_ptr<const ServiceState> build(Checkpoint ckpt,
                                                   const InteractionMatrix* corpus = nullptr,
                                                   const SplitSpec* split = nullptr);
};

struct Response {
  int status = 200;
  std::string body;
};

// Transport-free handlers. Every method is const and safe to call from any
// number of threads once a state has been installed.
class Service {
 public:
  Service() = default;
  explicit Service(std::shared_ptr<const ServiceState> state) { install(std::move(state)); }

  void install(std::shared_ptr<const ServiceState> state) {
    std::lock_guard lock(mu_);
    state_ = std::move(state);
  }
  std::shared_ptr<const ServiceState> state() const {
    std::lock_guard lock(mu_);
    return state_;
  }
  bool ready() const { return state() != nullptr; }

  Response meta() const;
  Response neighbors(const std::string& item_id, std::optional<std::string> n) const;
  Response control(const std::string& body) const;
  Response components(const std::string& user_id) const;

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const ServiceState> state_;
};

Response error_response(int status, const std::string& code, const std::string& message);

// Registers the four endpoints plus permissive CORS headers.
void mount(httplib::Server& server, const Service& service);

// Items of the same concept as `item`, by descending cosine on h, self
// excluded, ties to the lower index.
std::vector<std::pair<Index, double>> concept_neighbors(const ModelParams& params,
                                                        const ConceptAssignment& c, Index item,
                                                        std::size_t n);

}  // namespace macrid
