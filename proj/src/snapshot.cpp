#include "mtsph/snapshot.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mtsph {

namespace {

constexpr const char* kHeader = "id,x,y,z,vx,vy,vz,m,h,u,rho,bin";

[[noreturn]] void fail(int line_no, const std::string& what) {
    throw std::runtime_error("snapshot: line " + std::to_string(line_no) + ": " + what);
}

}  // namespace

void write_snapshot(std::ostream& os, const ParticleArray& parts,
                    std::optional<std::uint64_t> seed) {
    if (seed) os << "# seed=" << *seed << "\n";
    os << kHeader << "\n";
    char buf[512];
    for (const Particle& p : parts) {
        std::snprintf(buf, sizeof buf,
                      "%" PRId64 ",%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d",
                      p.id, p.pos.x, p.pos.y, p.pos.z, p.vel.x, p.vel.y, p.vel.z, p.m, p.h, p.u,
                      p.rho, p.bin);
        os << buf << "\n";
    }
}

void write_snapshot(const std::string& path, const ParticleArray& parts,
                    std::optional<std::uint64_t> seed) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("snapshot: cannot open " + path + " for writing");
    write_snapshot(os, parts, seed);
}

ParticleArray read_snapshot(std::istream& is) {
    ParticleArray parts;
    std::string line;
    int line_no = 0;
    bool header_seen = false;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            if (line != kHeader) fail(line_no, "expected header '" + std::string(kHeader) + "'");
            header_seen = true;
            continue;
        }
        std::array<std::string, 12> fields;
        std::size_t start = 0;
        int nf = 0;
        while (true) {
            std::size_t comma = line.find(',', start);
            std::string field = line.substr(start, comma == std::string::npos
                                                       ? std::string::npos
                                                       : comma - start);
            if (nf >= 12) fail(line_no, "too many fields");
            fields[nf++] = field;
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (nf != 12) fail(line_no, "expected 12 fields, got " + std::to_string(nf));

        auto parse_f = [&](const std::string& s) {
            char* end = nullptr;
            double v = std::strtod(s.c_str(), &end);
            if (end == s.c_str() || *end != '\0') fail(line_no, "bad number '" + s + "'");
            return v;
        };
        Particle p;
        {
            char* end = nullptr;
            p.id = std::strtoll(fields[0].c_str(), &end, 10);
            if (end == fields[0].c_str() || *end != '\0') fail(line_no, "bad id");
        }
        p.pos = {parse_f(fields[1]), parse_f(fields[2]), parse_f(fields[3])};
        p.vel = {parse_f(fields[4]), parse_f(fields[5]), parse_f(fields[6])};
        p.m = parse_f(fields[7]);
        p.h = parse_f(fields[8]);
        p.u = parse_f(fields[9]);
        p.rho = parse_f(fields[10]);
        {
            char* end = nullptr;
            p.bin = int(std::strtol(fields[11].c_str(), &end, 10));
            if (end == fields[11].c_str() || *end != '\0') fail(line_no, "bad bin");
        }
        p.pos_at_kick = p.pos;
        parts.push_back(p);
    }
    if (!header_seen) fail(line_no, "missing header");
    return parts;
}

ParticleArray read_snapshot(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("snapshot: cannot open " + path);
    return read_snapshot(is);
}

}  // namespace mtsph
