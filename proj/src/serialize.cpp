#include "fedsplit/serialize.hpp"

#include <cstring>
#include <fstream>

namespace fedsplit {

namespace {
constexpr std::uint64_t kModelMagic = 0x46534D4F44454C31ULL;  // "FSMODEL1"
}

void ByteWriter::u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void ByteWriter::f64(Scalar v) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    std::memcpy(&bits, &v, sizeof(bits));
    u64(bits);
}

void ByteWriter::vec(const Vector& v) {
    u64(static_cast<std::uint64_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) f64(v(i));
}

void ByteWriter::mat(const Matrix& m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c)
        for (Eigen::Index r = 0; r < m.rows(); ++r) f64(m(r, c));
}

void ByteWriter::layer(const Layer& l) {
    mat(l.W);
    vec(l.b);
}

void ByteWriter::stack(const LayerStack& s) {
    u64(s.size());
    for (const Layer& l : s) layer(l);
}

void ByteWriter::model(const SplitModel& m) {
    u64(kModelMagic);
    stack(m.theta);
    layer(m.phi);
}

std::uint64_t ByteReader::u64() {
    if (pos_ + 8 > buf_.size()) throw IoError("truncated binary payload");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 8;
    return v;
}

Scalar ByteReader::f64() {
    const std::uint64_t bits = u64();
    Scalar v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

Vector ByteReader::vec() {
    const std::uint64_t n = u64();
    Vector v(static_cast<Eigen::Index>(n));
    for (std::uint64_t i = 0; i < n; ++i) v(static_cast<Eigen::Index>(i)) = f64();
    return v;
}

Matrix ByteReader::mat() {
    const std::uint64_t rows = u64();
    const std::uint64_t cols = u64();
    if (rows > (1ULL << 32) || cols > (1ULL << 32)) throw IoError("implausible matrix header");
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::uint64_t c = 0; c < cols; ++c)
        for (std::uint64_t r = 0; r < rows; ++r)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = f64();
    return m;
}

Layer ByteReader::layer() {
    Layer l;
    l.W = mat();
    l.b = vec();
    if (l.b.size() != l.W.rows()) throw IoError("layer bias length mismatch in payload");
    return l;
}

LayerStack ByteReader::stack() {
    const std::uint64_t n = u64();
    if (n > 4096) throw IoError("implausible layer count");
    LayerStack s(static_cast<std::size_t>(n));
    for (auto& l : s) l = layer();
    return s;
}

SplitModel ByteReader::model() {
    if (u64() != kModelMagic) throw IoError("not a model payload");
    SplitModel m;
    m.theta = stack();
    m.phi = layer();
    return m;
}

void save_model(const SplitModel& m, const std::string& path) {
    ByteWriter w;
    w.model(m);
    write_file(w.bytes(), path);
}

SplitModel load_model(const std::string& path) {
    const std::vector<std::uint8_t> bytes = read_file(path);
    ByteReader r(bytes);
    SplitModel m = r.model();
    if (!r.exhausted()) throw IoError(path + ": trailing bytes after model payload");
    return m;
}

void write_file(const std::vector<std::uint8_t>& bytes, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write to " + path + " failed");
}

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open " + path);
    const std::streamsize n = in.tellg();
    in.seekg(0);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(n));
    in.read(reinterpret_cast<char*>(bytes.data()), n);
    if (!in) throw IoError("read from " + path + " failed");
    return bytes;
}

}  // namespace fedsplit
