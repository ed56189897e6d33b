#pragma once

// HTTP binding for the service: GET /cases, POST /api (one message in, response array out),
// GET /sessions/<id>/journal.

#include "scribe/service.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose _res macro collides with Eigen parameter names.
#include <httplib.h>

namespace scribe {

inline void mount_routes(httplib::Server& srv, Service& svc) {
  srv.Get("/cases", [&svc](const httplib::Request&, httplib::Response& res) {
    res.set_content(nlohmann::json(svc.case_names()).dump(), "application/json");
  });
  srv.Post("/api", [&svc](const httplib::Request& req, httplib::Response& res) {
    res.set_content(svc.handle_text(req.body).dump(), "application/json");
  });
  srv.Get(R"(/sessions/([^/]+)/journal)", [&svc](const httplib::Request& req, httplib::Response& res) {
    const auto lines = svc.journal_lines(req.matches[1]);
    if (!lines) {
      res.status = 404;
      res.set_content(R"({"code":"no_session"})", "application/json");
      return;
    }
    res.set_content(*lines, "application/x-ndjson");
  });
}

}  // namespace scribe
