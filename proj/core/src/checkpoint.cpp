#include "dgad/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dgad {

namespace {

constexpr std::uint32_t kVersion = 1;
constexpr char kMagic[4] = {'D', 'G', 'A', 'D'};

std::array<std::uint32_t, 256> make_crc_table() {
    std::array<std::uint32_t, 256> table{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        table[i] = c;
    }
    return table;
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& buf, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
    return v;
}

template <typename F>
std::string pack_payload(const std::vector<F>& host) {
    std::string out(host.size() * sizeof(F), '\0');
    std::memcpy(out.data(), host.data(), out.size());
    return out;  // little-endian host assumed; format is little-endian
}

std::string shape_csv(const std::vector<int>& shape) {
    std::ostringstream os;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    return os.str();
}

std::vector<int> parse_shape(const std::string& csv) {
    std::vector<int> shape;
    std::istringstream is(csv);
    std::string tok;
    while (std::getline(is, tok, ',')) shape.push_back(std::stoi(tok));
    return shape;
}

}  // namespace

std::uint32_t crc32(const void* data, std::size_t n) {
    static const auto table = make_crc_table();
    std::uint32_t c = 0xFFFFFFFFu;
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) c = table[(c ^ p[i]) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

const Archive::Entry* Archive::find(const std::string& name) const {
    for (const auto& e : tensors)
        if (e.name == name) return &e;
    return nullptr;
}

void Archive::add(const std::string& name, const std::vector<int>& shape, const std::vector<float>& v) {
    Entry e;
    e.name = name;
    e.shape = shape;
    e.f64 = false;
    e.data.assign(v.begin(), v.end());
    tensors.push_back(std::move(e));
}

void Archive::add(const std::string& name, const std::vector<int>& shape, const std::vector<double>& v) {
    Entry e;
    e.name = name;
    e.shape = shape;
    e.f64 = true;
    e.data = v;
    tensors.push_back(std::move(e));
}

void save_archive(const std::string& path, const Archive& archive) {
    std::string payload;
    std::ostringstream header;
    for (const auto& [k, v] : archive.meta) {
        if (k.find('=') != std::string::npos || k.rfind("tensor", 0) == 0)
            throw std::invalid_argument("archive meta key invalid: " + k);
        header << k << '=' << v << '\n';
    }
    for (const auto& e : archive.tensors) {
        std::string bytes;
        if (e.f64) {
            bytes = pack_payload(e.data);
        } else {
            std::vector<float> narrow(e.data.begin(), e.data.end());
            bytes = pack_payload(narrow);
        }
        header << "tensor name=" << e.name << " shape=" << shape_csv(e.shape)
               << " dtype=" << (e.f64 ? "f64" : "f32") << " offset=" << payload.size()
               << " size=" << bytes.size() << " crc32=" << crc32(bytes.data(), bytes.size()) << '\n';
        payload += bytes;
    }

    const std::string head = header.str();
    std::string blob;
    blob.append(kMagic, 4);
    put_u32(blob, kVersion);
    put_u32(blob, static_cast<std::uint32_t>(head.size()));
    blob += head;
    blob += payload;

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open for write: " + path);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw std::runtime_error("checkpoint: write failed: " + path);
}

Archive load_archive(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open: " + path);
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (blob.size() < 12 || std::memcmp(blob.data(), kMagic, 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    const std::uint32_t version = get_u32(blob, 4);
    if (version != kVersion)
        throw std::runtime_error("checkpoint: version mismatch (file " + std::to_string(version) +
                                 ", expected " + std::to_string(kVersion) + ")");
    const std::uint32_t header_len = get_u32(blob, 8);
    if (blob.size() < 12 + static_cast<std::size_t>(header_len))
        throw std::runtime_error("checkpoint: truncated header in " + path);
    const std::string head = blob.substr(12, header_len);
    const std::size_t payload_off = 12 + header_len;

    Archive archive;
    std::istringstream hs(head);
    std::string line;
    while (std::getline(hs, line)) {
        if (line.empty()) continue;
        if (line.rfind("tensor ", 0) == 0) {
            std::map<std::string, std::string> fields;
            std::istringstream ls(line.substr(7));
            std::string tok;
            while (ls >> tok) {
                const auto eq = tok.find('=');
                if (eq == std::string::npos)
                    throw std::runtime_error("checkpoint: malformed tensor line: " + line);
                fields[tok.substr(0, eq)] = tok.substr(eq + 1);
            }
            for (const char* req : {"name", "shape", "dtype", "offset", "size", "crc32"})
                if (!fields.count(req))
                    throw std::runtime_error(std::string("checkpoint: tensor line missing ") + req);

            const std::size_t offset = std::stoull(fields["offset"]);
            const std::size_t size = std::stoull(fields["size"]);
            if (payload_off + offset + size > blob.size())
                throw std::runtime_error("checkpoint: truncated payload for tensor " + fields["name"]);
            const char* bytes = blob.data() + payload_off + offset;
            const std::uint32_t want_crc = static_cast<std::uint32_t>(std::stoul(fields["crc32"]));
            if (crc32(bytes, size) != want_crc)
                throw std::runtime_error("checkpoint: checksum failure for tensor " + fields["name"]);

            Archive::Entry e;
            e.name = fields["name"];
            e.shape = parse_shape(fields["shape"]);
            if (fields["dtype"] == "f64") {
                e.f64 = true;
                if (size % sizeof(double)) throw std::runtime_error("checkpoint: bad f64 payload size");
                e.data.resize(size / sizeof(double));
                std::memcpy(e.data.data(), bytes, size);
            } else if (fields["dtype"] == "f32") {
                e.f64 = false;
                if (size % sizeof(float)) throw std::runtime_error("checkpoint: bad f32 payload size");
                std::vector<float> narrow(size / sizeof(float));
                std::memcpy(narrow.data(), bytes, size);
                e.data.assign(narrow.begin(), narrow.end());
            } else {
                throw std::runtime_error("checkpoint: unknown dtype " + fields["dtype"]);
            }
            if (e.data.size() != numel_of(e.shape))
                throw std::runtime_error("checkpoint: tensor size does not match shape for " + e.name);
            archive.tensors.push_back(std::move(e));
        } else {
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw std::runtime_error("checkpoint: malformed header line: " + line);
            archive.meta[line.substr(0, eq)] = line.substr(eq + 1);
        }
    }
    return archive;
}

}  // namespace dgad
