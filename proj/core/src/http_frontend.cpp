#include "melu/http_frontend.hpp"

#include <thread>

#include <httplib.h>

#include "melu/errors.hpp"

namespace melu {

using nlohmann::json;

namespace {

class BadRequest : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

json parse_body(const httplib::Request& req) {
  json body = json::parse(req.body, nullptr, false);
  if (body.is_discarded() || !body.is_object()) throw BadRequest("body must be a JSON object");
  return body;
}

std::map<std::string, std::string> parse_profile(const json& body) {
  auto it = body.find("profile");
  if (it == body.end() || !it->is_object()) throw BadRequest("'profile' must be an object");
  std::map<std::string, std::string> out;
  for (const auto& [key, value] : it->items()) {
    if (value.is_string()) {
      out[key] = value.get<std::string>();
    } else if (value.is_number_integer()) {
      out[key] = std::to_string(value.get<std::int64_t>());
    } else if (!value.is_null()) {
      throw BadRequest("profile field '" + key + "' must be a string or integer");
    }
  }
  return out;
}

std::map<std::int64_t, EvidenceRating> parse_ratings(const json& body) {
  auto it = body.find("ratings");
  if (it == body.end() || !it->is_array()) throw BadRequest("'ratings' must be an array");
  std::map<std::int64_t, EvidenceRating> out;
  for (const auto& entry : *it) {
    if (!entry.is_object() || !entry.contains("item_id") || !entry["item_id"].is_number_integer() ||
        !entry.contains("rating")) {
      throw BadRequest("each rating needs an integer 'item_id' and a 'rating'");
    }
    const auto id = entry["item_id"].get<std::int64_t>();
    const auto& r = entry["rating"];
    EvidenceRating rating;
    if (r.is_number()) {
      rating = r.get<double>();
    } else if (!(r.is_string() && r.get<std::string>() == "unknown")) {
      throw BadRequest("rating must be a number or \"unknown\"");
    }
    if (!out.emplace(id, rating).second) {
      throw BadRequest("duplicate rating for item " + std::to_string(id));
    }
  }
  return out;
}

json items_json(const std::vector<std::int64_t>& ids, const ServiceSnapshot& snap) {
  json out = json::array();
  for (auto id : ids) out.push_back(item_json(id, snap.item_info));
  return out;
}

std::string stage_name(SessionStage s) {
  switch (s) {
    case SessionStage::created: return "created";
    case SessionStage::evidence_submitted: return "evidence_submitted";
    case SessionStage::feedback_submitted: return "feedback_submitted";
  }
  return "created";
}

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const BadRequest& e) {
      reply(res, 400, {{"error", e.what()}});
    } catch (const ArgumentError& e) {
      reply(res, 400, {{"error", e.what()}});
    } catch (const SchemaError& e) {
      reply(res, 400, {{"error", e.what()}});
    } catch (const NotFoundError& e) {
      reply(res, 404, {{"error", e.what()}});
    } catch (const ConflictError& e) {
      reply(res, 409, {{"error", e.what()}});
    } catch (const ServiceUnavailableError& e) {
      reply(res, 503, {{"error", e.what()}});
    } catch (const std::exception& e) {
      reply(res, 500, {{"error", e.what()}});
    }
  };
}

}  // namespace

struct HttpFrontend::Impl {
  std::shared_ptr<OnboardingService> service;
  httplib::Server server;
  std::thread worker;
  int port = -1;

  void routes(const std::filesystem::path& static_dir) {
    server.Get("/api/health", guarded([this](const httplib::Request&, httplib::Response& res) {
      const bool ready = service->ready();
      reply(res, ready ? 200 : 503,
            {{"status", ready ? "ok" : "unavailable"}, {"sessions", service->session_count()}});
    }));

    server.Post("/api/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto profile = parse_profile(parse_body(req));
      const auto snap = service->snapshot();
      const auto session = service->create_session(profile);
      reply(res, 201, {{"session_id", session.session_id},
                       {"evidence", items_json(session.evidence_shown, *snap)}});
    }));

    server.Get(R"(/api/sessions/([^/]+))",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const auto session = service->find(req.matches[1]);
                 if (!session) throw NotFoundError("unknown session");
                 const auto snap = service->snapshot();
                 if (!snap) throw ServiceUnavailableError("no model checkpoint is loaded");
                 reply(res, 200, {{"session_id", session->session_id},
                                  {"stage", stage_name(session->stage)},
                                  {"evidence", items_json(session->evidence_shown, *snap)},
                                  {"recommendations", items_json(session->recommendations, *snap)}});
               }));

    server.Post(R"(/api/sessions/([^/]+)/evidence)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const auto ratings = parse_ratings(parse_body(req));
                  const auto snap = service->snapshot();
                  const auto recs = service->submit_evidence(req.matches[1], ratings);
                  reply(res, 200, {{"recommendations", items_json(recs, *snap)}});
                }));

    server.Post(R"(/api/sessions/([^/]+)/feedback)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const auto ratings = parse_ratings(parse_body(req));
                  const auto m = service->submit_feedback(req.matches[1], ratings);
                  reply(res, 200, {{"status", "recorded"}, {"ndcg1", m.ndcg1}});
                }));

    if (!static_dir.empty()) server.set_mount_point("/", static_dir.string());
  }
};

HttpFrontend::HttpFrontend(std::shared_ptr<OnboardingService> service,
                           std::filesystem::path static_dir)
    : impl_(std::make_unique<Impl>()) {
  if (!service) throw ArgumentError("null service");
  impl_->service = std::move(service);
  impl_->routes(static_dir);
}

HttpFrontend::~HttpFrontend() { stop(); }

int HttpFrontend::start(const std::string& host, int port) {
  if (impl_->worker.joinable()) throw ConflictError("server already running");
  impl_->port = port == 0 ? impl_->server.bind_to_any_port(host)
                          : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (impl_->port < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  impl_->worker = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return impl_->port;
}

void HttpFrontend::run(const std::string& host, int port) {
  impl_->port = port == 0 ? impl_->server.bind_to_any_port(host)
                          : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (impl_->port < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  impl_->server.listen_after_bind();
}

void HttpFrontend::stop() {
  impl_->server.stop();
  if (impl_->worker.joinable()) impl_->worker.join();
}

int HttpFrontend::bound_port() const { return impl_->port; }

}  // namespace melu
