#include "sopmas/pool.hpp"

#include <algorithm>

namespace sopmas {

std::uint64_t MessagePool::post(Message message) {
  std::lock_guard lock(mu_);
  if (closed_) throw PoolClosed();
  message.id = next_id_++;
  message.seq = next_seq_++;
  messages_.push_back(std::move(message));
  return messages_.back().id;
}

void MessagePool::record(ToolCallRecord record) {
  std::lock_guard lock(mu_);
  if (closed_) throw PoolClosed();
  record.seq = next_seq_++;
  tools_.push_back(std::move(record));
}

std::uint64_t MessagePool::next_seq() {
  std::lock_guard lock(mu_);
  return next_seq_++;
}

std::vector<Message> MessagePool::inbox(const std::string& agent, std::uint32_t generation) const {
  std::lock_guard lock(mu_);
  std::vector<Message> out;
  for (const auto& m : messages_) {
    if (m.recipient == agent && m.recipient_generation == generation && !consumed_.contains(m.id)) out.push_back(m);
  }
  return out;
}

bool MessagePool::has_mail(const std::string& agent, std::uint32_t generation) const {
  std::lock_guard lock(mu_);
  return std::any_of(messages_.begin(), messages_.end(), [&](const Message& m) {
    return m.recipient == agent && m.recipient_generation == generation && !consumed_.contains(m.id);
  });
}

void MessagePool::consume(const std::vector<std::uint64_t>& ids) {
  std::lock_guard lock(mu_);
  if (closed_) throw PoolClosed();
  consumed_.insert(ids.begin(), ids.end());
}

template <typename Pred>
PurgeReport MessagePool::purge_if(Pred&& involves, const std::string& agent, std::optional<std::uint32_t> generation) {
  std::lock_guard lock(mu_);
  if (closed_) throw PoolClosed();
  PurgeReport report;
  std::vector<Message> kept;
  for (auto& m : messages_) {
    if (involves(m)) {
      report.removed_ids.insert(m.id);
    } else {
      kept.push_back(std::move(m));
    }
  }
  for (auto& m : kept) {
    if (m.cause && report.removed_ids.contains(*m.cause)) m.cause.reset();
  }
  report.messages_removed = report.removed_ids.size();
  messages_ = std::move(kept);
  for (auto id : report.removed_ids) consumed_.erase(id);

  auto before = tools_.size();
  std::erase_if(tools_, [&](const ToolCallRecord& r) {
    return r.agent == agent && (!generation || r.generation == *generation);
  });
  report.tool_records_removed = before - tools_.size();
  return report;
}

PurgeReport MessagePool::purge_agent(const std::string& agent, std::uint32_t generation) {
  return purge_if(
      [&](const Message& m) {
        return (m.sender == agent && m.sender_generation == generation) ||
               (m.recipient == agent && m.recipient_generation == generation);
      },
      agent, generation);
}

PurgeReport MessagePool::purge_agent(const std::string& agent) {
  return purge_if([&](const Message& m) { return m.sender == agent || m.recipient == agent; }, agent, std::nullopt);
}

std::optional<Message> MessagePool::find(std::uint64_t id) const {
  std::lock_guard lock(mu_);
  for (const auto& m : messages_) {
    if (m.id == id) return m;
  }
  return std::nullopt;
}

std::vector<Message> MessagePool::messages() const {
  std::lock_guard lock(mu_);
  return messages_;
}

std::vector<ToolCallRecord> MessagePool::tool_records() const {
  std::lock_guard lock(mu_);
  return tools_;
}

std::size_t MessagePool::message_count() const {
  std::lock_guard lock(mu_);
  return messages_.size();
}

void MessagePool::close() {
  std::lock_guard lock(mu_);
  closed_ = true;
}

bool MessagePool::closed() const {
  std::lock_guard lock(mu_);
  return closed_;
}

}  // namespace sopmas
