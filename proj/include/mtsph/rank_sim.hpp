#pragma once

#include <atomic>
#include <cstdint>
#include <cstring>
#include <map>
#include <mutex>
#include <span>
#include <vector>

#include "mtsph/cell_tree.hpp"
#include "mtsph/particle.hpp"
#include "mtsph/partition.hpp"

namespace mtsph {

/// Linear network model: deliver = send + latency + bytes / bandwidth.
struct ChannelModel {
    double latency_ns = 2000.0;  // ~2 us interconnect stand-in
    double ns_per_byte = 1.0;
};

enum class MsgKind : std::uint32_t { particle_state = 0, density_result = 1 };

inline constexpr std::size_t kWireHeaderBytes = 24;
inline constexpr std::size_t kParticleStateBytes = 64;  // pos, vel, u, h
inline constexpr std::size_t kDensityResultBytes = 32;  // rho, n_wt, h, c

struct Message {
    int src = 0;
    int dst = 0;
    std::uint64_t cell = 0;
    MsgKind kind = MsgKind::particle_state;
    std::uint32_t count = 0;
    std::vector<std::uint8_t> bytes;  // header + packed records
    std::int64_t send_ns = 0;
    std::int64_t deliver_ns = 0;
};

/// Pure delivery-time model (no FIFO adjustment).
inline std::int64_t channel_deliver(const Message& msg, const ChannelModel& model) {
    if (model.latency_ns < 0 || model.ns_per_byte < 0)
        throw std::invalid_argument("channel_deliver: negative channel parameters");
    return msg.send_ns +
           std::int64_t(model.latency_ns + model.ns_per_byte * double(msg.bytes.size()));
}

/// Per-ordered-rank-pair channel enforcing FIFO delivery order.
class Channel {
  public:
    explicit Channel(ChannelModel model = {}) : model_(model) {}
    Channel(Channel&& o) noexcept : model_(o.model_), last_deliver_(o.last_deliver_.load()) {}
    std::int64_t deliver_time(Message& msg) {
        std::int64_t t = channel_deliver(msg, model_);
        std::int64_t prev = last_deliver_.load(std::memory_order_relaxed);
        while (true) {
            std::int64_t want = std::max(t, prev);
            if (last_deliver_.compare_exchange_weak(prev, want)) {
                msg.deliver_ns = want;
                return want;
            }
        }
    }

  private:
    ChannelModel model_;
    std::atomic<std::int64_t> last_deliver_{0};
};

// wire encoding (explicit little-endian)

void wire_put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void wire_put_u64(std::vector<std::uint8_t>& out, std::uint64_t v);
void wire_put_f64(std::vector<std::uint8_t>& out, double v);
std::uint32_t wire_get_u32(const std::uint8_t*& p);
std::uint64_t wire_get_u64(const std::uint8_t*& p);
double wire_get_f64(const std::uint8_t*& p);

/// Header {u32 src, u32 dst, u64 cell, u32 kind, u32 count} then packed
/// per-particle records.
Message encode_message(int src, int dst, std::uint64_t cell, MsgKind kind,
                       std::span<const Particle> parts);
/// Unpack a message into the given particle range (count must match).
void decode_message(const Message& msg, std::span<Particle> parts);

/// One simulated rank: shared-nothing particle storage in the global slot
/// layout (only owned + proxy ranges are ever touched), its own sort
/// caches, and per-step traffic counters.
struct RankState {
    int rank = 0;
    ParticleArray parts;
    SortStore sorts;
    std::vector<Tick> proxy_pos_tick;   // per cell: last position refresh
    std::vector<Tick> proxy_dens_tick;  // per cell: last density refresh
    std::atomic<std::uint64_t> messages_sent{0};
    std::atomic<std::uint64_t> bytes_sent{0};
    std::atomic<std::int64_t> busy_ns{0};

    void reset_counters() {
        messages_sent = 0;
        bytes_sent = 0;
        busy_ns = 0;
    }
};

/// Thread-safe mailbox keyed by (dst, cell, kind); FIFO per key.
class Mailbox {
  public:
    void post(Message msg);
    Message take(int dst, std::uint64_t cell, MsgKind kind);
    std::size_t pending() const;

  private:
    using Key = std::tuple<int, std::uint64_t, std::uint32_t>;
    mutable std::mutex mu_;
    std::map<Key, std::vector<Message>> queues_;
};

/// Route particles to their owning ranks: every rank gets the full slot
/// layout with owned ranges authoritative and foreign (proxy) ranges
/// seeded from the current global state. Checks particle conservation.
std::vector<RankState> distribute(const ParticleArray& global, const CellTree& tree,
                                  const Partition& partition, Tick now);

/// Count of distinct (rank, foreign top cell) proxy mirrors implied by the
/// cross-rank top-level adjacency of the partition.
std::uint64_t count_proxies(const CellTree& tree, const Partition& partition);

}  // namespace mtsph
