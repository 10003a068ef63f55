#pragma once

#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "vsg/remote.hpp"

namespace vsgtest {

using vsg::json;

/// Local HTTP endpoint whose behaviour each test scripts through `handler`.
class FakeEndpoint {
 public:
  using Handler = std::function<void(const json& body, const httplib::Request&, httplib::Response&)>;

  FakeEndpoint() {
    auto route = [this](const httplib::Request& req, httplib::Response& res) {
      Handler h;
      {
        std::lock_guard lock(mu);
        bodies.push_back(json::parse(req.body));
        paths.push_back(req.path);
        auth.push_back(req.has_header("Authorization") ? req.get_header_value("Authorization") : "");
        h = handler;
      }
      h(json::parse(req.body), req, res);
    };
    server_.Post(R"(/.*)", route);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~FakeEndpoint() {
    server_.stop();
    thread_.join();
  }

  vsg::RemoteEndpointConfig config(vsg::Dialect d = vsg::Dialect::Chat) const {
    vsg::RemoteEndpointConfig c;
    c.base_url = "http://127.0.0.1:" + std::to_string(port_);
    c.model = "test-model";
    c.auth_env = "VSG_TEST_TOKEN_UNSET";
    c.backoff_s = 0.001;
    c.timeout_s = 5.0;
    c.dialect = d;
    return c;
  }

  std::mutex mu;
  Handler handler;
  std::vector<json> bodies;
  std::vector<std::string> paths;
  std::vector<std::string> auth;

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

inline json chat_reply(const std::vector<std::pair<std::string, double>>& top, const std::string& text = "A") {
  json alts = json::array();
  for (const auto& [tok, lp] : top) alts.push_back({{"token", tok}, {"logprob", lp}});
  json lp = top.empty() ? json(nullptr)
                        : json{{"content", json::array({{{"token", text}, {"logprob", 0.0}, {"top_logprobs", alts}}})}};
  return {{"choices", json::array({{{"message", {{"role", "assistant"}, {"content", text}}}, {"logprobs", lp}}})}};
}

inline void reply(httplib::Response& res, const json& j, int status = 200) {
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

}  // namespace vsgtest
