#pragma once

#include "fedsplit/nn.hpp"
#include "fedsplit/split_model.hpp"
#include "fedsplit/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fedsplit {

// Little-endian binary encoding: u64 sizes, f64 payloads. Matrices are stored
// column-major behind a (rows, cols) header, so encodings are shape-checked on
// the way back in.
class ByteWriter {
  public:
    void u64(std::uint64_t v);
    void f64(Scalar v);
    void vec(const Vector& v);
    void mat(const Matrix& m);
    void layer(const Layer& l);
    void stack(const LayerStack& s);
    void model(const SplitModel& m);

    const std::vector<std::uint8_t>& bytes() const { return buf_; }
    std::size_t size() const { return buf_.size(); }

  private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
  public:
    explicit ByteReader(const std::vector<std::uint8_t>& buf) : buf_(buf) {}

    std::uint64_t u64();
    Scalar f64();
    Vector vec();
    Matrix mat();
    Layer layer();
    LayerStack stack();
    SplitModel model();

    bool exhausted() const { return pos_ == buf_.size(); }

  private:
    const std::vector<std::uint8_t>& buf_;
    std::size_t pos_ = 0;
};

void save_model(const SplitModel& m, const std::string& path);
SplitModel load_model(const std::string& path);

void write_file(const std::vector<std::uint8_t>& bytes, const std::string& path);
std::vector<std::uint8_t> read_file(const std::string& path);

}  // namespace fedsplit
