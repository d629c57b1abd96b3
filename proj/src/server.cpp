#include "jndloc/server.hpp"

// The default backlog of 5 drops connections under bursts of clients.
#define CPPHTTPLIB_LISTEN_BACKLOG 512
#include <httplib.h>

#include <atomic>
#include <chrono>
#include <thread>

#include "jndloc/errors.hpp"
#include "jndloc/png_io.hpp"

namespace jndloc::server {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& msg) {
    send_json(res, status, {{"error", msg}, {"status", status}});
}

std::string bearer(const httplib::Request& req) {
    const auto h = req.get_header_value("Authorization");
    constexpr std::string_view prefix = "Bearer ";
    if (h.size() > prefix.size() && h.compare(0, prefix.size(), prefix) == 0) return h.substr(prefix.size());
    return {};
}

json parse_body(const httplib::Request& req) {
    try {
        return json::parse(req.body);
    } catch (const json::exception&) {
        throw study::ServiceError(422, "request body is not valid JSON");
    }
}

// Runs a handler, mapping library exceptions onto HTTP statuses.
template <typename F>
void guarded(httplib::Response& res, F&& f) {
    try {
        f();
    } catch (const study::ServiceError& e) {
        send_error(res, e.status(), e.what());
    } catch (const ValidationError& e) {
        send_error(res, 422, e.what());
    } catch (const DomainError& e) {
        send_error(res, 422, e.what());
    } catch (const json::exception& e) {
        send_error(res, 422, e.what());
    } catch (const std::exception& e) {
        send_error(res, 500, e.what());
    }
}

} // namespace

struct HttpServer::Impl {
    study::StudyService& service;
    ServerConfig config;
    LadderCache cache;
    httplib::Server http;
    std::atomic<bool> bound{false};

    Impl(study::StudyService& s, ServerConfig c) : service(s), config(std::move(c)), cache(config.ladder_root) {
        http.new_task_queue = [n = config.threads] { return new httplib::ThreadPool(static_cast<std::size_t>(n)); };
        routes();
    }

    bool admin_ok(const httplib::Request& req) const {
        if (config.admin_token.empty()) return false;
        const auto h = req.get_header_value("X-Admin-Token");
        return h == config.admin_token || bearer(req) == config.admin_token;
    }

    void routes() {
        http.Post("/v1/session", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const json body = parse_body(req);
                study::SessionRequest sr;
                if (!body.is_object() || !body.contains("worker_id") || !body.at("worker_id").is_string()) {
                    throw study::ServiceError(422, "'worker_id' is required");
                }
                sr.worker_id = body.at("worker_id").get<std::string>();
                const json cal = body.value("calibration", json::object());
                if (!cal.is_object() || !cal.contains("ppi") || !cal.at("ppi").is_number()) {
                    throw study::ServiceError(422, "'calibration.ppi' is required");
                }
                sr.ppi = cal.at("ppi").get<double>();
                sr.confirmed_distance = cal.value("confirmed_distance", false);
                const json vp = body.value("viewport", json::object());
                sr.viewport_width = vp.value("width", 0);
                sr.viewport_height = vp.value("height", 0);
                send_json(res, 201, service.create_session(sr));
            });
        });

        http.Get("/v1/qualification/next", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] { send_json(res, 200, service.qualification_next(bearer(req))); });
        });
        http.Post("/v1/qualification/response", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] { send_json(res, 200, service.qualification_respond(bearer(req), parse_body(req))); });
        });

        http.Get("/v1/hit/next", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] { send_json(res, 200, service.hit_next(bearer(req))); });
        });
        http.Post(R"(/v1/hit/([A-Za-z0-9._-]+)/response)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                send_json(res, 200, service.hit_respond(bearer(req), req.matches[1].str(), parse_body(req)));
            });
        });

        // Frames are immutable once published, so no lock is taken here.
        http.Get(R"(/v1/frame/([A-Za-z0-9._-]+)/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const std::string ref = req.matches[1].str();
                const int level = std::stoi(req.matches[2].str());
                if (level < 0 || level > kMaxLevel) throw study::ServiceError(404, "no such level");
                const auto& images = service.study().images;
                const auto it = std::find_if(images.begin(), images.end(),
                                             [&](const qc::ImageInfo& i) { return i.image_ref == ref; });
                if (it == images.end()) throw study::ServiceError(404, "unknown image " + ref);
                const std::string ladder_id = it->gold ? gold::gold_ladder_id(it->source_id) : it->source_id;
                const auto path = cache.frame_path(ladder_id, it->codec, level);
                std::vector<std::uint8_t> bytes;
                try {
                    bytes = png::read_file(path);
                } catch (const IoError&) {
                    throw study::ServiceError(404, "frame not available");
                }
                res.status = 200;
                res.set_header("Cache-Control", "public, max-age=31536000, immutable");
                res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
            });
        });

        // Ground-truth heat map; only training items are ever shown to workers.
        http.Get(R"(/v1/gold/([A-Za-z0-9._-]+)/heatmap)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const std::string ref = req.matches[1].str();
                const auto& s = service.study();
                if (std::find(s.training_items.begin(), s.training_items.end(), ref) == s.training_items.end()) {
                    throw study::ServiceError(404, "no heat map for " + ref);
                }
                const auto& spec = s.gold.at(ref);
                const auto field = gold::blend_weight_field(spec.centers, spec.sigma_region, spec.width, spec.height);
                png::Gray16 g{field.width(), field.height(), {}};
                g.values.reserve(field.values().size());
                for (double v : field.values()) {
                    g.values.push_back(static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * 65535.0)));
                }
                const auto bytes = png::encode_gray16(g);
                res.status = 200;
                res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
            });
        });

        http.Get("/v1/admin/stats", [this](const httplib::Request& req, httplib::Response& res) {
            if (!admin_ok(req)) return send_error(res, 401, "admin credential required");
            guarded(res, [&] { send_json(res, 200, service.stats()); });
        });
        http.Get("/v1/admin/export", [this](const httplib::Request& req, httplib::Response& res) {
            if (!admin_ok(req)) return send_error(res, 401, "admin credential required");
            guarded(res, [&] {
                const auto analysis = qc::analyze(service.response_log(), config.qc, config.sigma_blur);
                json out = {{"report", qc::to_json(analysis.pipeline.report)},
                            {"images", analysis.aggregate.annotations.size()},
                            {"flagged", analysis.aggregate.flagged}};
                if (config.export_dir) {
                    out["manifest"] = qc::export_dataset(analysis.aggregate.annotations, *config.export_dir,
                                                         config.sigma_blur, analysis.pipeline.report);
                }
                send_json(res, 200, out);
            });
        });

        http.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
            try {
                if (ep) std::rethrow_exception(ep);
            } catch (const std::exception& e) {
                send_error(res, 500, e.what());
                return;
            }
            send_error(res, 500, "internal error");
        });
        http.set_error_handler([](const httplib::Request&, httplib::Response& res) {
            if (res.body.empty()) send_error(res, res.status, res.status == 404 ? "not found" : "error");
        });
    }
};

HttpServer::HttpServer(study::StudyService& service, ServerConfig config)
    : impl_(std::make_unique<Impl>(service, std::move(config))) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind() {
    int port = impl_->config.port;
    if (port == 0) {
        port = impl_->http.bind_to_any_port(impl_->config.host);
        if (port < 0) throw IoError("cannot bind " + impl_->config.host);
    } else if (!impl_->http.bind_to_port(impl_->config.host, port)) {
        throw IoError("cannot bind " + impl_->config.host + ":" + std::to_string(port));
    }
    impl_->bound = true;
    return port;
}

void HttpServer::serve() {
    if (!impl_->bound) bind();
    impl_->http.listen_after_bind();
}

void HttpServer::stop() {
    if (impl_ && impl_->http.is_running()) impl_->http.stop();
}

void HttpServer::wait_until_ready() const { impl_->http.wait_until_ready(); }

} // namespace jndloc::server
