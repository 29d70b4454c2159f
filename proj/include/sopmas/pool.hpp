#pragma once

#include <cstdint>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sopmas/domain.hpp"

namespace sopmas {

class PoolClosed : public Error {
 public:
  PoolClosed() : Error("message pool is closed") {}
};

struct PurgeReport {
  std::size_t messages_removed = 0;
  std::size_t tool_records_removed = 0;
  std::set<std::uint64_t> removed_ids;
};

/// Global message pool plus tool-usage history. Every committed entry takes
/// the next value of a shared sequence counter so the transcript can be
/// replayed in commit order.
class MessagePool {
 public:
  /// Assigns the next id and sequence number; returns the id.
  std::uint64_t post(Message message);
  void record(ToolCallRecord record);
  /// Reserves a sequence number for an entry kept outside the pool.
  std::uint64_t next_seq();

  /// Unconsumed messages addressed to this incarnation, in id order.
  std::vector<Message> inbox(const std::string& agent, std::uint32_t generation = 0) const;
  void consume(const std::vector<std::uint64_t>& ids);
  bool has_mail(const std::string& agent, std::uint32_t generation = 0) const;

  /// Removes every message sent or received by, and every tool record of,
  /// the given incarnation. Surviving messages caused by a removed one lose
  /// their cause link.
  PurgeReport purge_agent(const std::string& agent, std::uint32_t generation);
  /// Removes every incarnation of `agent`.
  PurgeReport purge_agent(const std::string& agent);

  std::optional<Message> find(std::uint64_t id) const;
  std::vector<Message> messages() const;
  std::vector<ToolCallRecord> tool_records() const;
  std::size_t message_count() const;

  void close();
  bool closed() const;

 private:
  template <typename Pred>
  PurgeReport purge_if(Pred&& pred, const std::string& agent, std::optional<std::uint32_t> generation);

  mutable std::mutex mu_;
  std::vector<Message> messages_;
  std::vector<ToolCallRecord> tools_;
  std::set<std::uint64_t> consumed_;
  std::uint64_t next_id_ = 1;
  std::uint64_t next_seq_ = 1;
  bool closed_ = false;
};

}  // namespace sopmas
