// Copyright 2026 The vparcel Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "vparcel/bench.hpp"
#include "vparcel/error.hpp"
#include "vparcel/parcelport.hpp"
#include "vparcel/transport.hpp"
#include "vparcel/wire.hpp"

namespace py = pybind11;
using namespace vparcel;

namespace {

Bytes to_cpp(const py::bytes& b) {
  const std::string_view s = b;
  return to_bytes(s);
}

py::bytes to_py(const Bytes& b) {
  return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
}

struct Received {
  rank_t source;
  std::uint64_t parcel_id;
  Bytes nzc;
  std::vector<Bytes> zc;
};

// A parcelport whose handler queues parcels for Python to collect.
class Port {
 public:
  Port(PortConfig cfg, rank_t rank, EndpointMatrix m) : port_(cfg, rank, std::move(m)) {
    port_.register_handler([this](Parcel&& p, rank_t source) {
      std::lock_guard lk(mu_);
      inbox_.push_back({source, p.parcel_id, std::move(p.nzc), std::move(p.zc)});
    });
    port_.register_zc_allocator([](std::span<const std::uint32_t> sizes) {
      std::vector<Bytes> out;
      for (auto s : sizes) out.emplace_back(s);
      return out;
    });
    port_.register_error_handler([this](const ParcelError& e) {
      std::lock_guard lk(mu_);
      errors_.push_back(std::string(to_string(e.code)) + ": " + e.message);
    });
  }

  std::uint64_t send(std::size_t worker, rank_t dest, const py::bytes& nzc,
                     const std::vector<py::bytes>& zc) {
    Parcel p;
    p.dest = dest;
    p.nzc = to_cpp(nzc);
    for (auto& z : zc) p.zc.push_back(to_cpp(z));
    return port_.send_parcel(worker, std::move(p));
  }

  bool background_work(std::size_t worker) { return port_.background_work(worker); }

  py::list take() {
    std::deque<Received> got;
    {
      std::lock_guard lk(mu_);
      got.swap(inbox_);
    }
    py::list out;
    for (auto& r : got) {
      py::list zc;
      for (auto& z : r.zc) zc.append(to_py(z));
      py::dict d;
      d["source"] = r.source;
      d["parcel_id"] = r.parcel_id;
      d["nzc"] = to_py(r.nzc);
      d["zc"] = zc;
      out.append(d);
    }
    return out;
  }

  std::vector<std::string> errors() {
    std::lock_guard lk(mu_);
    return errors_;
  }

  Parcelport& port() { return port_; }

 private:
  std::mutex mu_;
  std::deque<Received> inbox_;
  std::vector<std::string> errors_;
  Parcelport port_;
};

std::vector<std::shared_ptr<Port>> connect(const PortConfig& cfg, std::size_t ranks,
                                           TransportKind kind) {
  TransportConfig tc;
  tc.kind = kind;
  auto matrices = connect_all(tc, ranks, cfg.num_channels);
  std::vector<std::shared_ptr<Port>> out;
  for (rank_t r = 0; r < ranks; ++r) {
    out.push_back(std::make_shared<Port>(cfg, r, std::move(matrices[r])));
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-channel parcel transport with pluggable completion.";

  py::register_exception<error>(m, "VparcelError");

  m.attr("TAG_LIMIT") = tag_limit;
  m.attr("WIRE_VERSION") = wire_version;

  py::class_<Header>(m, "Header")
      .def(py::init<>())
      .def_readwrite("version", &Header::version)
      .def_readwrite("channel_index", &Header::channel_index)
      .def_property(
          "followup_tag", [](const Header& h) { return h.followup_tag.value(); },
          [](Header& h, std::uint32_t v) { h.followup_tag = Tag{v}; })
      .def_readwrite("nzc_size", &Header::nzc_size)
      .def_readwrite("zc_sizes", &Header::zc_sizes)
      .def_readwrite("piggybacked", &Header::piggybacked)
      .def_property(
          "payload", [](const Header& h) { return to_py(h.payload); },
          [](Header& h, const py::bytes& b) { h.payload = to_cpp(b); })
      .def("__eq__", [](const Header& a, const Header& b) { return a == b; });

  m.def("encode_header", [](const Header& h) { return to_py(encode_header(h)); });
  m.def("decode_header", [](const py::bytes& b) { return decode_header(to_cpp(b)); });
  m.def("allocate_tag", [](std::uint64_t c) { return allocate_tag(c).value(); });
  m.def("map_thread_to_channel", &map_thread_to_channel, py::arg("thread"), py::arg("threads"),
        py::arg("channels"));

  py::enum_<Strategy>(m, "Strategy").value("local", Strategy::local).value("random", Strategy::random);
  py::enum_<CompletionMode>(m, "CompletionMode")
      .value("pool", CompletionMode::pool)
      .value("continuation", CompletionMode::continuation);
  py::enum_<LockMode>(m, "LockMode")
      .value("blocking", LockMode::blocking)
      .value("try_lock", LockMode::try_lock);
  py::enum_<TransportKind>(m, "TransportKind")
      .value("loopback", TransportKind::loopback)
      .value("socket", TransportKind::socket);
  py::enum_<bench::Benchmark>(m, "Benchmark")
      .value("pingpong", bench::Benchmark::pingpong)
      .value("flood", bench::Benchmark::flood)
      .value("attentiveness", bench::Benchmark::attentiveness);

  py::class_<PortConfig>(m, "PortConfig")
      .def(py::init<>())
      .def_readwrite("num_channels", &PortConfig::num_channels)
      .def_readwrite("num_threads", &PortConfig::num_threads)
      .def_readwrite("strategy", &PortConfig::strategy)
      .def_readwrite("completion_mode", &PortConfig::completion_mode)
      .def_readwrite("lock_mode", &PortConfig::lock_mode)
      .def_readwrite("eager_threshold", &PortConfig::eager_threshold)
      .def_readwrite("drain_budget", &PortConfig::drain_budget)
      .def_readwrite("global_progress_interval", &PortConfig::global_progress_interval);

  py::class_<Port, std::shared_ptr<Port>>(m, "Parcelport")
      .def("send_parcel", &Port::send, py::arg("worker"), py::arg("dest"), py::arg("nzc"),
           py::arg("zc") = std::vector<py::bytes>{})
      .def("background_work", &Port::background_work, py::arg("worker"),
           py::call_guard<py::gil_scoped_release>())
      .def("take_received", &Port::take)
      .def("errors", &Port::errors)
      .def("sends_in_flight", [](Port& p) { return p.port().sends_in_flight(); })
      .def("channel_for", [](Port& p, std::size_t w) { return p.port().channel_for(w); })
      .def("stats", [](Port& p) {
        const auto s = p.port().stats();
        py::dict d;
        d["parcels_sent"] = s.parcels_sent;
        d["parcels_delivered"] = s.parcels_delivered;
        d["parcel_errors"] = s.parcel_errors;
        d["frames_sent"] = s.frames_sent;
        d["header_frames_sent"] = s.header_frames_sent;
        return d;
      });

  m.def("connect", &connect, py::arg("config"), py::arg("ranks") = 2,
        py::arg("transport") = TransportKind::loopback);

  py::class_<bench::BenchConfig>(m, "BenchConfig")
      .def(py::init<>())
      .def_readwrite("benchmark", &bench::BenchConfig::benchmark)
      .def_readwrite("threads", &bench::BenchConfig::threads)
      .def_readwrite("channels", &bench::BenchConfig::channels)
      .def_readwrite("iterations", &bench::BenchConfig::iterations)
      .def_readwrite("warmup", &bench::BenchConfig::warmup)
      .def_readwrite("msg_size", &bench::BenchConfig::msg_size)
      .def_readwrite("zc_chunks", &bench::BenchConfig::zc_chunks)
      .def_readwrite("zc_size", &bench::BenchConfig::zc_size)
      .def_readwrite("random_sizes", &bench::BenchConfig::random_sizes)
      .def_readwrite("strategy", &bench::BenchConfig::strategy)
      .def_readwrite("completion_mode", &bench::BenchConfig::completion_mode)
      .def_readwrite("lock_mode", &bench::BenchConfig::lock_mode)
      .def_readwrite("global_progress_interval", &bench::BenchConfig::global_progress_interval)
      .def_readwrite("eager_threshold", &bench::BenchConfig::eager_threshold)
      .def_readwrite("seed", &bench::BenchConfig::seed)
      .def_readwrite("transport", &bench::BenchConfig::transport)
      .def_readwrite("window", &bench::BenchConfig::window)
      .def_readwrite("task_duration_ms", &bench::BenchConfig::task_duration_ms)
      .def_readwrite("task_fraction", &bench::BenchConfig::task_fraction)
      .def_readwrite("send_interval_us", &bench::BenchConfig::send_interval_us)
      .def_readwrite("timeout_s", &bench::BenchConfig::timeout_s);

  py::class_<bench::BenchResult>(m, "BenchResult")
      .def_readonly("config", &bench::BenchResult::config)
      .def_readonly("ok", &bench::BenchResult::ok)
      .def_readonly("failure", &bench::BenchResult::failure)
      .def_readonly("elapsed_s", &bench::BenchResult::elapsed_s)
      .def_readonly("message_rate", &bench::BenchResult::message_rate)
      .def_readonly("p50_us", &bench::BenchResult::p50_us)
      .def_readonly("p99_us", &bench::BenchResult::p99_us)
      .def_readonly("max_us", &bench::BenchResult::max_us)
      .def_readonly("parcels_sent", &bench::BenchResult::parcels_sent)
      .def_readonly("parcels_delivered", &bench::BenchResult::parcels_delivered)
      .def_readonly("frames_sent", &bench::BenchResult::frames_sent)
      .def_readonly("header_frames_sent", &bench::BenchResult::header_frames_sent)
      .def_readonly("blocked", &bench::BenchResult::blocked)
      .def_readonly("busy", &bench::BenchResult::busy);

  m.def("run", &bench::run, py::arg("config"), py::call_guard<py::gil_scoped_release>());
  m.def("csv_header", &bench::csv_header);
  m.def("emit_csv", &bench::emit_csv);
}
