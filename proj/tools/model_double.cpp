// Stand-in simulator speaking the line-delimited JSON model protocol, used to
// exercise the external-model adapter and the pipeline without a real code.
//
// Responses: y_i = sum_l k_l t_i^l (l = 1..keep) with t_i equally spaced on
// [0, 1], or y_i = k_(i mod d) with --identity; --offset is added to every
// entry. Misbehaviour is opt-in through the remaining flags.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <iostream>
#include <string>
#include <thread>

int main(int argc, char** argv) {
  CLI::App app{"test-double simulator"};
  int in_dim = 2, out_dim = 30, keep = -1, fail_every = 0, die_after = 0, sleep_ms = 0;
  double offset = 0.0;
  bool bad_handshake = false, garbage = false, identity = false;
  app.add_option("--in", in_dim, "parameter dimension");
  app.add_option("--out", out_dim, "output dimension");
  app.add_option("--keep", keep, "polynomial coefficients used (default: all)");
  app.add_option("--offset", offset, "constant added to every output");
  app.add_option("--fail-every", fail_every, "answer every Nth request with an error");
  app.add_option("--die-after", die_after, "exit without answering request N+1");
  app.add_option("--sleep-ms", sleep_ms, "delay before each answer");
  app.add_flag("--identity", identity, "echo the parameters instead of a polynomial");
  app.add_flag("--bad-handshake", bad_handshake, "announce the wrong protocol");
  app.add_flag("--garbage", garbage, "answer requests with a non-JSON line");
  CLI11_PARSE(app, argc, argv);
  if (keep < 0 || keep > in_dim) keep = in_dim;

  using nlohmann::json;
  std::cout << json{{"protocol", bad_handshake ? "other/0" : "bae-model/1"}, {"input_dim", in_dim},
                    {"output_dim", out_dim}}
                   .dump()
            << std::endl;

  std::string line;
  long long served = 0;
  while (std::getline(std::cin, line)) {
    if (die_after > 0 && served >= die_after) return 1;
    ++served;
    json req;
    try {
      req = json::parse(line);
    } catch (const json::exception&) {
      std::cout << json{{"id", -1}, {"error", "unparseable request"}}.dump() << std::endl;
      continue;
    }
    const auto id = req.value("id", -1LL);
    if (sleep_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(sleep_ms));
    if (garbage) {
      std::cout << "not json" << std::endl;
      continue;
    }
    if (fail_every > 0 && served % fail_every == 0) {
      std::cout << json{{"id", id}, {"error", "requested failure"}}.dump() << std::endl;
      continue;
    }
    const auto k = req.at("k").get<std::vector<double>>();
    if (static_cast<int>(k.size()) != in_dim) {
      std::cout << json{{"id", id}, {"error", "wrong parameter length"}}.dump() << std::endl;
      continue;
    }
    std::vector<double> y(static_cast<std::size_t>(out_dim), offset);
    for (int i = 0; i < out_dim; ++i) {
      if (identity) {
        y[static_cast<std::size_t>(i)] += k[static_cast<std::size_t>(i % in_dim)];
        continue;
      }
      const double t = out_dim > 1 ? double(i) / double(out_dim - 1) : 0.0;
      for (int l = 0; l < keep; ++l) y[static_cast<std::size_t>(i)] += k[static_cast<std::size_t>(l)] * std::pow(t, l + 1);
    }
    std::cout << json{{"id", id}, {"y", y}}.dump() << std::endl;
  }
  return 0;
}
