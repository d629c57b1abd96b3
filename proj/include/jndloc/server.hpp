#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "jndloc/qc.hpp"
#include "jndloc/study.hpp"

namespace jndloc::server {

struct ServerConfig {
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    std::string admin_token;
    std::filesystem::path ladder_root = "cache";
    // /v1/admin/export also writes the dataset here when set.
    std::optional<std::filesystem::path> export_dir;
    qc::QcConfig qc;
    double sigma_blur = critmap::kDefaultBlurSigma;
    int threads = 8;
};

// HTTP/JSON front end over a StudyService; every route lives under /v1.
class HttpServer {
public:
    HttpServer(study::StudyService& service, ServerConfig config);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    // Binds and returns the bound port (throws on failure).
    int bind();
    // Blocks until stop().
    void serve();
    void stop();
    void wait_until_ready() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace jndloc::server
