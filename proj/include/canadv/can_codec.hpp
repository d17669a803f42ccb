#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace canadv {

enum class ByteOrder { little_endian, big_endian };

// One signal of a CAN message, in DBC conventions:
//  - little_endian (@1): start_bit is the LSB, bits ascend through the payload.
//  - big_endian (@0): start_bit is the MSB in Motorola "sawtooth" numbering.
struct SignalDef {
    std::string name;
    int start_bit = 0;
    int bit_length = 1;
    ByteOrder byte_order = ByteOrder::little_endian;
    bool is_signed = false;
    double scale = 1.0;
    double offset = 0.0;
    double min_phys = 0.0;
    double max_phys = 0.0;
    std::string unit;

    // Payload bit positions (byte * 8 + bit) occupied by the signal, LSB first.
    // Throws CatalogError when the layout leaves the 64-bit payload.
    std::vector<int> bit_positions() const;

    std::int64_t raw_min() const;
    std::int64_t raw_max() const;

    // Physical value for a raw count; the one place raw -> physical happens.
    double to_physical(std::int64_t raw) const {
        return static_cast<double>(raw) * scale + offset;
    }
};

struct MessageDef {
    std::uint32_t message_id = 0;
    std::string name;
    int dlc = 8;
    std::string transmitter;
    std::vector<SignalDef> signals;
};

struct SignalRef {
    std::uint32_t message_id;
    std::size_t position;
};

// Parsed DBC subset. Immutable after parsing.
class SignalCatalog {
public:
    // Adds a message; validates its signals and global name uniqueness.
    void add_message(MessageDef message);

    const std::map<std::uint32_t, MessageDef>& messages() const { return messages_; }
    const MessageDef* find_message(std::uint32_t message_id) const;
    const SignalDef& signal(std::string_view name) const;
    const SignalDef* find_signal(std::string_view name) const;
    SignalRef locate(std::string_view name) const;

    // Signal names in definition order; fixes the feature order of windows.
    const std::vector<std::string>& signal_names() const { return signal_order_; }
    std::size_t signal_count() const { return signal_order_.size(); }
    std::size_t message_count() const { return messages_.size(); }

    // Non-blank lines the parser did not interpret.
    std::size_t skipped_lines = 0;

private:
    std::map<std::uint32_t, MessageDef> messages_;
    std::unordered_map<std::string, SignalRef> signal_index_;
    std::vector<std::string> signal_order_;
};

using Payload = std::array<std::uint8_t, 8>;

struct CanFrame {
    std::uint32_t can_id = 0;
    double timestamp = 0.0;
    std::uint8_t dlc = 8;
    Payload payload{};
};

SignalCatalog parse_dbc(std::string_view text);
SignalCatalog load_dbc(const std::string& path);

// Hex CAN identifier ("0x260", "2B0") to its decimal message id.
std::uint32_t cid_to_mid(std::string_view cid_hex);

// Raw count of one signal, two's complement when signed.
std::int64_t extract_raw(const Payload& payload, const SignalDef& signal);
void insert_raw(Payload& payload, const SignalDef& signal, std::int64_t raw);

std::map<std::string, double> decode_frame(const CanFrame& frame, const SignalCatalog& catalog);

// Throws EncodeError naming the signal when a value is missing or its raw
// count does not fit the signal's bit width.
Payload encode_signals(const std::map<std::string, double>& values, const MessageDef& message);

// Nearest physical value whose raw count is representable and inside
// [min_phys, max_phys] when the range admits one.
double quantize(const SignalDef& signal, double value);

struct DecodedSample {
    double timestamp;
    std::string signal;
    double value;
};

struct DecodeResult {
    std::vector<DecodedSample> samples;
    std::size_t decoded_frames = 0;
    std::size_t skipped_frames = 0;
};

// Decodes a whole trace; frames with unknown ids are counted and skipped.
DecodeResult decode_frames(const std::vector<CanFrame>& frames, const SignalCatalog& catalog);

// Raw trace CSV: timestamp,can_id_hex,b0..b7 (bytes in hex). A header row is optional.
std::vector<CanFrame> read_raw_trace(std::istream& in);
std::vector<CanFrame> read_raw_trace(const std::string& path);
void write_raw_trace(std::ostream& out, const std::vector<CanFrame>& frames);

// Built-in 20-signal brake/powertrain catalog used by the synthetic generator.
std::string_view default_dbc_text();
const SignalCatalog& default_catalog();

}  // namespace canadv
