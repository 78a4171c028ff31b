#include "navhop/events.hpp"

namespace navhop {

void CollectingSink::emit(const Event& ev) {
  std::lock_guard lk(mu_);
  events_.push_back(ev);
}

std::vector<Event> CollectingSink::events() const {
  std::lock_guard lk(mu_);
  return events_;
}

Message event_to_message(const Event& ev) {
  Message msg;
  msg.set("service", "event");
  msg.set("source", ev.source);
  msg.set("type", ev.type);
  if (!ev.job_id.empty()) msg.set("job_id", ev.job_id);
  for (const auto& [k, v] : ev.attrs) msg.set("attr." + k, v);
  return msg;
}

Event event_from_message(const Message& msg) {
  Event ev;
  ev.source = msg.get("source");
  ev.type = msg.get("type");
  ev.job_id = msg.opt("job_id").value_or("");
  for (const auto& [k, v] : msg.fields) {
    if (k.rfind("attr.", 0) == 0) ev.attrs[k.substr(5)] = v;
  }
  return ev;
}

void SocketSink::emit(const Event& ev) {
  try {
    Socket sock = dial(collector_, 2000);
    // Long ack timeout: when the collector chooses this point as a kill
    // site, SIGKILL lands while we sit in this read.
    set_io_timeout(sock.fd(), 600000);
    write_frame(sock.fd(), encode_message(event_to_message(ev)));
    (void)read_frame(sock.fd());
  } catch (const std::exception&) {
    // No collector listening; run uninstrumented.
  }
}

std::shared_ptr<EventSink> make_event_sink(const std::string& collector_addr) {
  if (collector_addr.empty()) return std::make_shared<NullSink>();
  return std::make_shared<SocketSink>(HostPort::parse(collector_addr));
}

}  // namespace navhop
