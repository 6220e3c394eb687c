#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

#include "ttd/fp16.hpp"

namespace ttd {

/// Stage-to-stage buffer with one or two banks. Each bank is a 2-D store of
/// [block x address]: block is the next stage's summation index, address the
/// next stage's time index, so a T_in-wide feature vector is one address read
/// across T_in consecutive blocks.
///
/// Role tracking enforces that a stage never reads and writes the same bank.
class PingPongBuffer {
 public:
  PingPongBuffer(std::size_t banks, std::size_t capacity_elements);

  std::size_t banks() const noexcept { return bank_count_; }
  std::size_t capacity() const noexcept { return capacity_; }

  /// Shape the bank for the partial it is about to receive.
  void configure(std::size_t bank, std::size_t blocks, std::size_t addresses);

  /// Declare the banks a stage reads and writes (nullopt = none, e.g. the
  /// input buffer or the output buffer). Throws std::logic_error when both
  /// roles land on the same bank or when a read targets a bank that was not
  /// written by the previous stage.
  void begin_stage(std::optional<std::size_t> read_bank, std::optional<std::size_t> write_bank);
  void end_stage();

  void write(std::size_t bank, std::size_t block, std::size_t address, Fp16Bits v);
  Fp16Bits read(std::size_t bank, std::size_t block, std::size_t address) const;

  std::size_t blocks(std::size_t bank) const { return bank_.at(bank).blocks; }
  std::size_t addresses(std::size_t bank) const { return bank_.at(bank).addresses; }

  std::size_t reads() const noexcept { return reads_; }
  std::size_t writes() const noexcept { return writes_; }

 private:
  struct Bank {
    std::size_t blocks = 0, addresses = 0;
    std::vector<Fp16Bits> cells;
  };

  std::size_t bank_count_;
  std::size_t capacity_;
  std::array<Bank, 2> bank_;
  std::optional<std::size_t> reading_, writing_, last_written_;
  mutable std::size_t reads_ = 0;
  std::size_t writes_ = 0;
};

}  // namespace ttd
