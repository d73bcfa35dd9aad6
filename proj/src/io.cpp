#include "pgla/io.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace pgla {

namespace {

// --- little-endian binary stream helpers -----------------------------------

struct Writer {
    std::string buf;

    void raw(const void* p, size_t n) { buf.append(static_cast<const char*>(p), n); }
    void u8(uint8_t v) { raw(&v, 1); }
    void u32(uint32_t v) { raw(&v, 4); }
    void u64(uint64_t v) { raw(&v, 8); }
    void f32(float v) { raw(&v, 4); }
    void f64(double v) { raw(&v, 8); }
    void magic(const char m[4]) { raw(m, 4); }
};

struct Reader {
    const std::string& buf;
    size_t pos = 0;
    std::string path;

    [[noreturn]] void fail(const std::string& what) const {
        throw Error(ErrorKind::Format, path + ": " + what + " at byte " + std::to_string(pos));
    }
    void raw(void* p, size_t n) {
        if (pos + n > buf.size()) fail("truncated file");
        std::memcpy(p, buf.data() + pos, n);
        pos += n;
    }
    uint8_t u8() {
        uint8_t v;
        raw(&v, 1);
        return v;
    }
    uint32_t u32() {
        uint32_t v;
        raw(&v, 4);
        return v;
    }
    uint64_t u64() {
        uint64_t v;
        raw(&v, 8);
        return v;
    }
    float f32() {
        float v;
        raw(&v, 4);
        return v;
    }
    double f64() {
        double v;
        raw(&v, 8);
        return v;
    }
    void expect_magic(const char m[4]) {
        char got[4];
        raw(got, 4);
        if (std::memcmp(got, m, 4) != 0) {
            pos -= 4;
            fail(std::string("bad magic, expected ") + std::string(m, 4));
        }
    }
};

std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::MissingArtifact, path + ": cannot open");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void encode_gradient(Writer& w, const GradientVector& g, const FileStamp& stamp) {
    w.magic("PGRD");
    w.u32(1);
    w.u64(stamp.seed);
    w.u64(stamp.config_digest);
    w.u32(static_cast<uint32_t>(g.layout.entries.size()));
    for (const auto& e : g.layout.entries) {
        w.u32(static_cast<uint32_t>(e.name.size()));
        w.raw(e.name.data(), e.name.size());
        w.u32(static_cast<uint32_t>(e.shape.size()));
        for (auto d : e.shape) w.u32(d);
    }
    w.u8(static_cast<uint8_t>(g.role));
    for (float v : g.values.data) w.f32(v);
}

GradientFileContents decode_gradient(Reader& r) {
    r.expect_magic("PGRD");
    uint32_t version = r.u32();
    if (version != 1) r.fail("unsupported version " + std::to_string(version));
    GradientFileContents out;
    out.stamp.seed = r.u64();
    out.stamp.config_digest = r.u64();
    uint32_t layers = r.u32();
    if (layers == 0 || layers > 1u << 20) r.fail("implausible layer count");
    LayerLayout layout;
    for (uint32_t i = 0; i < layers; ++i) {
        uint32_t name_len = r.u32();
        if (name_len > 4096) r.fail("implausible name length");
        std::string name(name_len, '\0');
        r.raw(name.data(), name_len);
        uint32_t rank = r.u32();
        if (rank == 0 || rank > 8) r.fail("implausible rank");
        std::vector<uint32_t> dims(rank);
        for (auto& d : dims) d = r.u32();
        layout.push(std::move(name), std::move(dims));
    }
    layout.validate();
    auto role = static_cast<GradientRole>(r.u8());
    if (static_cast<uint8_t>(role) > 3) r.fail("bad role byte");
    std::vector<float> values(layout.total());
    for (auto& v : values) v = r.f32();
    out.gradient = GradientVector(FlatTensor::vector_of(std::move(values)), std::move(layout), role);
    return out;
}

} // namespace

void atomic_write_bytes(const std::string& path, const std::string& bytes) {
    namespace fs = std::filesystem;
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorKind::Format, tmp + ": cannot open for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error(ErrorKind::Format, tmp + ": short write");
    }
    fs::rename(tmp, path);
}

void write_gradient_file(const std::string& path, const GradientVector& g, const FileStamp& stamp) {
    Writer w;
    encode_gradient(w, g, stamp);
    atomic_write_bytes(path, w.buf);
}

GradientFileContents read_gradient_file(const std::string& path) {
    std::string bytes = read_file_bytes(path);
    Reader r{bytes, 0, path};
    auto out = decode_gradient(r);
    if (r.pos != bytes.size()) r.fail("trailing bytes");
    return out;
}

void write_gradient_set(const std::string& path, const std::vector<GradientVector>& gs, const FileStamp& stamp) {
    if (gs.empty()) throw Error(ErrorKind::Input, "write_gradient_set: empty set");
    Writer w;
    w.magic("PGRS");
    w.u32(1);
    w.u64(stamp.seed);
    w.u64(stamp.config_digest);
    w.u32(static_cast<uint32_t>(gs.size()));
    for (const auto& g : gs) encode_gradient(w, g, stamp);
    atomic_write_bytes(path, w.buf);
}

GradientSetContents read_gradient_set(const std::string& path) {
    std::string bytes = read_file_bytes(path);
    Reader r{bytes, 0, path};
    r.expect_magic("PGRS");
    uint32_t version = r.u32();
    if (version != 1) r.fail("unsupported version " + std::to_string(version));
    GradientSetContents out;
    out.stamp.seed = r.u64();
    out.stamp.config_digest = r.u64();
    uint32_t count = r.u32();
    if (count == 0 || count > 1u << 24) r.fail("implausible record count");
    out.gradients.reserve(count);
    for (uint32_t i = 0; i < count; ++i) out.gradients.push_back(decode_gradient(r).gradient);
    if (r.pos != bytes.size()) r.fail("trailing bytes");
    return out;
}

void write_checkpoint(const std::string& path, const NoisePredictor& p, const FileStamp& stamp) {
    Writer w;
    w.magic("PGDM");
    w.u32(1);
    w.u64(stamp.seed);
    w.u64(stamp.config_digest);
    w.u32(p.spec.grid_side);
    w.u8(p.spec.conditional ? 1 : 0);
    w.u32(p.spec.hidden);
    w.u32(p.spec.blocks);
    w.u32(p.spec.time_dim);
    w.u32(static_cast<uint32_t>(p.schedule.T));
    w.f64(p.schedule.beta_start);
    w.f64(p.schedule.beta_end);
    w.u64(p.params.size());
    for (float v : p.params.data) w.f32(v);
    atomic_write_bytes(path, w.buf);
}

CheckpointContents read_checkpoint(const std::string& path) {
    std::string bytes = read_file_bytes(path);
    Reader r{bytes, 0, path};
    r.expect_magic("PGDM");
    uint32_t version = r.u32();
    if (version != 1) r.fail("unsupported version " + std::to_string(version));
    CheckpointContents out;
    out.stamp.seed = r.u64();
    out.stamp.config_digest = r.u64();
    PredictorSpec spec;
    spec.grid_side = r.u32();
    spec.conditional = r.u8() != 0;
    spec.hidden = r.u32();
    spec.blocks = r.u32();
    spec.time_dim = r.u32();
    uint32_t T = r.u32();
    double b0 = r.f64();
    double b1 = r.f64();
    uint64_t count = r.u64();
    LayerLayout layout = spec.build_layout();
    if (count != layout.total()) r.fail("parameter count does not match architecture");
    std::vector<float> params(count);
    for (auto& v : params) v = r.f32();
    if (r.pos != bytes.size()) r.fail("trailing bytes");
    out.predictor = NoisePredictor{spec, FlatTensor::vector_of(std::move(params)), std::move(layout),
                                   make_schedule(static_cast<int>(T), b0, b1)};
    return out;
}

// --- IDX -------------------------------------------------------------------

namespace {

uint32_t read_be32(Reader& r) {
    uint8_t b[4];
    r.raw(b, 4);
    return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
           (static_cast<uint32_t>(b[2]) << 8) | b[3];
}

} // namespace

ProbeDataset load_idx_dataset(const std::string& images_path, const std::string& labels_path, uint32_t classes,
                              uint32_t cap) {
    std::string ib = read_file_bytes(images_path);
    Reader ir{ib, 0, images_path};
    if (read_be32(ir) != 0x00000803u) {
        ir.pos = 0;
        ir.fail("bad IDX image magic (want 0x00000803)");
    }
    uint32_t n = read_be32(ir);
    uint32_t rows = read_be32(ir);
    uint32_t cols = read_be32(ir);
    if (rows == 0 || cols == 0) ir.fail("zero image dimensions");

    std::string lb = read_file_bytes(labels_path);
    Reader lr{lb, 0, labels_path};
    if (read_be32(lr) != 0x00000801u) {
        lr.pos = 0;
        lr.fail("bad IDX label magic (want 0x00000801)");
    }
    uint32_t ln = read_be32(lr);
    if (ln != n) throw Error(ErrorKind::Format, labels_path + ": label count " + std::to_string(ln) +
                                                    " does not match image count " + std::to_string(n));

    uint32_t keep = cap == 0 ? n : std::min(cap, n);
    ProbeDataset out;
    out.source = ProbeSource::IdxFile;
    out.samples.reserve(keep);
    const size_t px = static_cast<size_t>(rows) * cols;
    for (uint32_t i = 0; i < keep; ++i) {
        std::vector<float> img(px);
        for (size_t p = 0; p < px; ++p) img[p] = static_cast<float>(ir.u8()) / 255.0f;
        uint8_t label = lr.u8();
        if (label >= classes)
            throw Error(ErrorKind::Format, labels_path + ": label " + std::to_string(label) +
                                               " outside class count " + std::to_string(classes));
        out.samples.push_back({FlatTensor({1u, rows, cols}, std::move(img)), label});
    }
    return out;
}

// --- metrics CSV -------------------------------------------------------------

const char* kMetricsCsvHeader = "trial,stage,cos_g,psnr_g,psnr_i,lra,match_loss,M,t_prime,c,seed,config_digest";

namespace {

std::string fmt_opt(const std::optional<double>& v) {
    if (!v) return "";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", *v);
    return buf;
}

std::optional<double> parse_opt(const std::string& s) {
    if (s.empty()) return std::nullopt;
    return std::stod(s);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

} // namespace

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
    std::string out = std::string(kMetricsCsvHeader) + "\n";
    for (const auto& r : rows) {
        char head[64];
        std::snprintf(head, sizeof head, "%u,", r.trial);
        out += head;
        out += r.stage + ",";
        out += fmt_opt(r.cos_g) + "," + fmt_opt(r.psnr_g) + "," + fmt_opt(r.psnr_i) + "," + fmt_opt(r.lra) + "," +
               fmt_opt(r.match_loss) + "," + fmt_opt(r.noise_scale_m) + ",";
        out += (r.t_prime ? std::to_string(*r.t_prime) : "") + ",";
        out += fmt_opt(r.c) + ",";
        char tail[64];
        std::snprintf(tail, sizeof tail, "%" PRIu64 ",", r.seed);
        out += tail;
        out += r.config_digest;
        out += "\n";
    }
    atomic_write_bytes(path, out);
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
    std::string bytes = read_file_bytes(path);
    std::istringstream in(bytes);
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorKind::Format, path + ": empty csv");
    if (line != kMetricsCsvHeader) throw Error(ErrorKind::Format, path + ": unexpected csv header");
    std::vector<MetricsRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 12) throw Error(ErrorKind::Format, path + ": bad field count");
        MetricsRow r;
        r.trial = static_cast<uint32_t>(std::stoul(f[0]));
        r.stage = f[1];
        r.cos_g = parse_opt(f[2]);
        r.psnr_g = parse_opt(f[3]);
        r.psnr_i = parse_opt(f[4]);
        r.lra = parse_opt(f[5]);
        r.match_loss = parse_opt(f[6]);
        r.noise_scale_m = parse_opt(f[7]);
        if (!f[8].empty()) r.t_prime = std::stoi(f[8]);
        r.c = parse_opt(f[9]);
        r.seed = std::stoull(f[10]);
        r.config_digest = f[11];
        rows.push_back(std::move(r));
    }
    return rows;
}

std::string digest_hex(uint64_t digest) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, digest);
    return buf;
}

} // namespace pgla
