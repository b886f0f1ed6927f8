#include "mtsph/rank_sim.hpp"

#include <bit>
#include <set>
#include <stdexcept>

namespace mtsph {

void wire_put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out.push_back(std::uint8_t(v >> (8 * k)));
}

void wire_put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int k = 0; k < 8; ++k) out.push_back(std::uint8_t(v >> (8 * k)));
}

void wire_put_f64(std::vector<std::uint8_t>& out, double v) {
    wire_put_u64(out, std::bit_cast<std::uint64_t>(v));
}

std::uint32_t wire_get_u32(const std::uint8_t*& p) {
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= std::uint32_t(*p++) << (8 * k);
    return v;
}

std::uint64_t wire_get_u64(const std::uint8_t*& p) {
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= std::uint64_t(*p++) << (8 * k);
    return v;
}

double wire_get_f64(const std::uint8_t*& p) { return std::bit_cast<double>(wire_get_u64(p)); }

Message encode_message(int src, int dst, std::uint64_t cell, MsgKind kind,
                       std::span<const Particle> parts) {
    Message msg;
    msg.src = src;
    msg.dst = dst;
    msg.cell = cell;
    msg.kind = kind;
    msg.count = std::uint32_t(parts.size());

    const std::size_t record =
        kind == MsgKind::particle_state ? kParticleStateBytes : kDensityResultBytes;
    msg.bytes.reserve(kWireHeaderBytes + record * parts.size());
    wire_put_u32(msg.bytes, std::uint32_t(src));
    wire_put_u32(msg.bytes, std::uint32_t(dst));
    wire_put_u64(msg.bytes, cell);
    wire_put_u32(msg.bytes, std::uint32_t(kind));
    wire_put_u32(msg.bytes, msg.count);

    for (const Particle& p : parts) {
        if (kind == MsgKind::particle_state) {
            wire_put_f64(msg.bytes, p.pos.x);
            wire_put_f64(msg.bytes, p.pos.y);
            wire_put_f64(msg.bytes, p.pos.z);
            wire_put_f64(msg.bytes, p.vel.x);
            wire_put_f64(msg.bytes, p.vel.y);
            wire_put_f64(msg.bytes, p.vel.z);
            wire_put_f64(msg.bytes, p.u);
            wire_put_f64(msg.bytes, p.h);
        } else {
            wire_put_f64(msg.bytes, p.rho);
            wire_put_f64(msg.bytes, p.n_wt);
            wire_put_f64(msg.bytes, p.h);
            wire_put_f64(msg.bytes, p.c);
        }
    }
    return msg;
}

void decode_message(const Message& msg, std::span<Particle> parts) {
    if (msg.count != parts.size())
        throw std::runtime_error("decode_message: record count does not match cell range");
    const std::uint8_t* p = msg.bytes.data();
    std::uint32_t src = wire_get_u32(p);
    std::uint32_t dst = wire_get_u32(p);
    std::uint64_t cell = wire_get_u64(p);
    std::uint32_t kind = wire_get_u32(p);
    std::uint32_t count = wire_get_u32(p);
    if (src != std::uint32_t(msg.src) || dst != std::uint32_t(msg.dst) || cell != msg.cell ||
        kind != std::uint32_t(msg.kind) || count != msg.count)
        throw std::runtime_error("decode_message: header mismatch");

    for (Particle& part : parts) {
        if (msg.kind == MsgKind::particle_state) {
            part.pos.x = wire_get_f64(p);
            part.pos.y = wire_get_f64(p);
            part.pos.z = wire_get_f64(p);
            part.vel.x = wire_get_f64(p);
            part.vel.y = wire_get_f64(p);
            part.vel.z = wire_get_f64(p);
            part.u = wire_get_f64(p);
            part.h = wire_get_f64(p);
        } else {
            part.rho = wire_get_f64(p);
            part.n_wt = wire_get_f64(p);
            part.h = wire_get_f64(p);
            part.c = wire_get_f64(p);
        }
    }
}

void Mailbox::post(Message msg) {
    std::lock_guard<std::mutex> g(mu_);
    queues_[{msg.dst, msg.cell, std::uint32_t(msg.kind)}].push_back(std::move(msg));
}

Message Mailbox::take(int dst, std::uint64_t cell, MsgKind kind) {
    std::lock_guard<std::mutex> g(mu_);
    auto it = queues_.find({dst, cell, std::uint32_t(kind)});
    if (it == queues_.end() || it->second.empty())
        throw std::logic_error("Mailbox::take: no message pending (protocol bug)");
    Message msg = std::move(it->second.front());
    it->second.erase(it->second.begin());
    return msg;
}

std::size_t Mailbox::pending() const {
    std::lock_guard<std::mutex> g(mu_);
    std::size_t n = 0;
    for (const auto& [k, q] : queues_) n += q.size();
    return n;
}

std::vector<RankState> distribute(const ParticleArray& global, const CellTree& tree,
                                  const Partition& partition, Tick now) {
    if (int(partition.assignment.size()) != tree.n_top())
        throw std::invalid_argument("distribute: partition does not cover the top grid");
    for (int rank : partition.assignment)
        if (rank < 0 || rank >= partition.n_ranks)
            throw std::invalid_argument("distribute: orphan cell (no rank)");

    std::vector<RankState> ranks(partition.n_ranks);
    std::uint64_t owned_total = 0;
    for (int t = 0; t < tree.n_top(); ++t) owned_total += tree.cells[t].count;
    if (owned_total != global.size())
        throw std::logic_error("distribute: top-level ranges do not cover all particles");

    for (int r = 0; r < partition.n_ranks; ++r) {
        RankState& state = ranks[r];
        state.rank = r;
        state.parts = global;  // owned ranges authoritative, the rest proxy-seeded
        state.sorts.reset(tree.cells.size());
        state.proxy_pos_tick.assign(tree.cells.size(), now);
        state.proxy_dens_tick.assign(tree.cells.size(), now);
    }
    return ranks;
}

std::uint64_t count_proxies(const CellTree& tree, const Partition& partition) {
    std::set<std::pair<int, int>> mirrors;  // (rank, foreign top cell)
    for (int a = 0; a < tree.n_top(); ++a) {
        if (tree.cells[a].empty()) continue;
        auto [ax, ay, az] = tree.top_coords(a);
        for (int ox = -1; ox <= 1; ++ox)
            for (int oy = -1; oy <= 1; ++oy)
                for (int oz = -1; oz <= 1; ++oz) {
                    if (ox == 0 && oy == 0 && oz == 0) continue;
                    int wx = ((ax + ox) % tree.top_dims[0] + tree.top_dims[0]) % tree.top_dims[0];
                    int wy = ((ay + oy) % tree.top_dims[1] + tree.top_dims[1]) % tree.top_dims[1];
                    int wz = ((az + oz) % tree.top_dims[2] + tree.top_dims[2]) % tree.top_dims[2];
                    int b = tree.top_index_of(wx, wy, wz);
                    if (tree.cells[b].empty()) continue;
                    int ra = partition.assignment[a];
                    int rb = partition.assignment[b];
                    if (ra != rb) mirrors.insert({ra, b});
                }
    }
    return mirrors.size();
}

}  // namespace mtsph
