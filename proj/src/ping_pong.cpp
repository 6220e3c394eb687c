#include "ttd/ping_pong.hpp"

#include <stdexcept>
#include <string>

namespace ttd {

PingPongBuffer::PingPongBuffer(std::size_t banks, std::size_t capacity_elements)
    : bank_count_(banks), capacity_(capacity_elements) {
  if (banks != 1 && banks != 2) throw InvalidArgument("ping-pong buffer has 1 or 2 banks");
}

void PingPongBuffer::configure(std::size_t bank, std::size_t blocks, std::size_t addresses) {
  if (bank >= bank_count_) throw IndexError("bank index out of range");
  const std::size_t need = blocks * addresses;
  if (capacity_ != 0 && need > capacity_) {
    throw CapacityError("ping-pong bank needs " + std::to_string(need) + " elements, has " +
                            std::to_string(capacity_),
                        need, capacity_);
  }
  auto& b = bank_[bank];
  b.blocks = blocks;
  b.addresses = addresses;
  b.cells.assign(need, Fp16Bits{});
}

void PingPongBuffer::begin_stage(std::optional<std::size_t> read_bank,
                                 std::optional<std::size_t> write_bank) {
  if (read_bank && write_bank && *read_bank == *write_bank) {
    throw std::logic_error("bank " + std::to_string(*read_bank) +
                           " cannot be read and written in the same stage");
  }
  if (read_bank && last_written_ != read_bank) {
    throw std::logic_error("stage reads bank " + std::to_string(*read_bank) +
                           " which the previous stage did not write");
  }
  reading_ = read_bank;
  writing_ = write_bank;
}

void PingPongBuffer::end_stage() {
  // A stage that only reads leaves the last-written marker on its input bank.
  if (writing_) last_written_ = writing_;
  reading_.reset();
  writing_.reset();
}

void PingPongBuffer::write(std::size_t bank, std::size_t block, std::size_t address, Fp16Bits v) {
  if (writing_ != bank) throw std::logic_error("write to a bank not owned by the current stage");
  auto& b = bank_[bank];
  if (block >= b.blocks || address >= b.addresses) throw IndexError("bank write out of range");
  b.cells[block * b.addresses + address] = v;
  ++writes_;
}

Fp16Bits PingPongBuffer::read(std::size_t bank, std::size_t block, std::size_t address) const {
  if (reading_ != bank) throw std::logic_error("read from a bank not owned by the current stage");
  const auto& b = bank_[bank];
  if (block >= b.blocks || address >= b.addresses) throw IndexError("bank read out of range");
  ++reads_;
  return b.cells[block * b.addresses + address];
}

}  // namespace ttd
