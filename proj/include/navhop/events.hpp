#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "navhop/net.hpp"

namespace navhop {

// Lifecycle breadcrumb emitted by agents and the scheduler. The harness
// collector acks each one before the sender proceeds, which turns every
// emission point into a place where a crash can be injected deterministically.
struct Event {
  std::string source;  // node id, or "scheduler"
  std::string type;
  std::string job_id;
  std::map<std::string, std::string> attrs;

  std::string attr(const std::string& key) const {
    auto it = attrs.find(key);
    return it == attrs.end() ? std::string() : it->second;
  }
};

class EventSink {
 public:
  virtual ~EventSink() = default;
  virtual void emit(const Event& ev) = 0;
};

class NullSink : public EventSink {
 public:
  void emit(const Event&) override {}
};

class CollectingSink : public EventSink {
 public:
  void emit(const Event& ev) override;
  std::vector<Event> events() const;

 private:
  mutable std::mutex mu_;
  std::vector<Event> events_;
};

// Ships each event to a collector over TCP and blocks until the collector
// acks it. A collector that wants the sender dead at this point simply
// withholds the ack and SIGKILLs the process instead. A missing or departed
// collector is tolerated so instrumented binaries also run uninstrumented.
class SocketSink : public EventSink {
 public:
  explicit SocketSink(HostPort collector) : collector_(std::move(collector)) {}
  void emit(const Event& ev) override;

 private:
  HostPort collector_;
};

Message event_to_message(const Event& ev);
Event event_from_message(const Message& msg);

std::shared_ptr<EventSink> make_event_sink(const std::string& collector_addr);

}  // namespace navhop
