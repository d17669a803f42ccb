#include "canadv/can_codec.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <istream>
#include <ostream>
#include <regex>
#include <sstream>

#include "canadv/error.hpp"

namespace canadv {

namespace {

std::uint64_t low_mask(int bits) {
    return bits >= 64 ? ~std::uint64_t{0} : ((std::uint64_t{1} << bits) - 1);
}

std::uint64_t payload_le(const Payload& p) {
    std::uint64_t w = 0;
    for (int i = 0; i < 8; ++i) w |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return w;
}

std::uint64_t payload_be(const Payload& p) {
    std::uint64_t w = 0;
    for (int i = 0; i < 8; ++i) w |= static_cast<std::uint64_t>(p[i]) << (8 * (7 - i));
    return w;
}

void store_le(Payload& p, std::uint64_t w) {
    for (int i = 0; i < 8; ++i) p[i] = static_cast<std::uint8_t>(w >> (8 * i));
}

void store_be(Payload& p, std::uint64_t w) {
    for (int i = 0; i < 8; ++i) p[i] = static_cast<std::uint8_t>(w >> (8 * (7 - i)));
}

// Shift of the signal's LSB inside the word returned by payload_le/payload_be.
int lsb_shift(const SignalDef& s) {
    if (s.byte_order == ByteOrder::little_endian) return s.start_bit;
    const int msb = (7 - s.start_bit / 8) * 8 + s.start_bit % 8;
    return msb - s.bit_length + 1;
}

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double parse_real(std::string_view token, std::size_t line, const char* what) {
    token = trim(token);
    double v = 0.0;
    const auto* first = token.data();
    const auto* last = token.data() + token.size();
    if (!token.empty() && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last) {
        throw ParseError(line, std::string("bad ") + what + " '" + std::string(token) + "'");
    }
    return v;
}

long long parse_integer(std::string_view token, std::size_t line, const char* what) {
    token = trim(token);
    long long v = 0;
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc{} || ptr != token.data() + token.size()) {
        throw ParseError(line, std::string("bad ") + what + " '" + std::string(token) + "'");
    }
    return v;
}

std::string first_token(std::string_view line) {
    line = trim(line);
    const auto end = line.find_first_of(" \t:");
    return std::string(line.substr(0, end));
}

void validate_signal(const SignalDef& s) {
    if (s.bit_length < 1 || s.bit_length > 64) {
        throw CatalogError("signal " + s.name + ": bit length must be in [1,64]");
    }
    if (s.start_bit < 0 || s.start_bit > 63) {
        throw CatalogError("signal " + s.name + ": start bit must be in [0,63]");
    }
    if (!s.is_signed && s.bit_length == 64) {
        throw CatalogError("signal " + s.name + ": unsigned 64-bit signals are not supported");
    }
    if (s.scale == 0.0 || !std::isfinite(s.scale) || !std::isfinite(s.offset)) {
        throw CatalogError("signal " + s.name + ": scale must be finite and non-zero");
    }
    if (!(s.min_phys <= s.max_phys)) {
        throw CatalogError("signal " + s.name + ": min exceeds max");
    }
    (void)s.bit_positions();
}

}  // namespace

std::vector<int> SignalDef::bit_positions() const {
    std::vector<int> bits;
    bits.reserve(static_cast<std::size_t>(bit_length));
    if (byte_order == ByteOrder::little_endian) {
        if (start_bit + bit_length > 64) {
            throw CatalogError("signal " + name + " extends past the 64-bit payload");
        }
        for (int k = 0; k < bit_length; ++k) bits.push_back(start_bit + k);
        return bits;
    }
    int pos = start_bit;
    for (int k = 0; k < bit_length; ++k) {
        if (pos < 0 || pos > 63) {
            throw CatalogError("signal " + name + " extends past the 64-bit payload");
        }
        bits.push_back(pos);
        pos = (pos % 8 == 0) ? pos + 15 : pos - 1;
    }
    std::reverse(bits.begin(), bits.end());
    return bits;
}

std::int64_t SignalDef::raw_min() const {
    if (!is_signed) return 0;
    if (bit_length == 64) return std::numeric_limits<std::int64_t>::min();
    return -(std::int64_t{1} << (bit_length - 1));
}

std::int64_t SignalDef::raw_max() const {
    if (is_signed) {
        if (bit_length == 64) return std::numeric_limits<std::int64_t>::max();
        return (std::int64_t{1} << (bit_length - 1)) - 1;
    }
    return static_cast<std::int64_t>(low_mask(bit_length));
}

void SignalCatalog::add_message(MessageDef message) {
    if (message.dlc < 0 || message.dlc > 8) {
        throw CatalogError("message " + message.name + ": dlc must be in [0,8]");
    }
    if (messages_.count(message.message_id) != 0) {
        throw CatalogError("duplicate message id " + std::to_string(message.message_id));
    }
    std::uint64_t used_le = 0;
    std::uint64_t used_be = 0;
    for (std::size_t i = 0; i < message.signals.size(); ++i) {
        const auto& s = message.signals[i];
        validate_signal(s);
        if (signal_index_.count(s.name) != 0) {
            throw CatalogError("duplicate signal name " + s.name);
        }
        for (std::size_t j = 0; j < i; ++j) {
            if (message.signals[j].name == s.name) {
                throw CatalogError("duplicate signal name " + s.name);
            }
        }
        std::uint64_t mask = 0;
        for (int b : s.bit_positions()) {
            if (b >= message.dlc * 8) {
                throw CatalogError("signal " + s.name + " lies outside the message dlc");
            }
            mask |= std::uint64_t{1} << b;
        }
        auto& used = s.byte_order == ByteOrder::little_endian ? used_le : used_be;
        if ((used & mask) != 0) {
            throw CatalogError("signal " + s.name + " overlaps another signal of " + message.name);
        }
        used |= mask;
    }
    for (std::size_t i = 0; i < message.signals.size(); ++i) {
        signal_index_.emplace(message.signals[i].name, SignalRef{message.message_id, i});
        signal_order_.push_back(message.signals[i].name);
    }
    const auto id = message.message_id;
    messages_.emplace(id, std::move(message));
}

const MessageDef* SignalCatalog::find_message(std::uint32_t message_id) const {
    const auto it = messages_.find(message_id);
    return it == messages_.end() ? nullptr : &it->second;
}

const SignalDef* SignalCatalog::find_signal(std::string_view name) const {
    const auto it = signal_index_.find(std::string(name));
    if (it == signal_index_.end()) return nullptr;
    return &messages_.at(it->second.message_id).signals[it->second.position];
}

const SignalDef& SignalCatalog::signal(std::string_view name) const {
    const auto* s = find_signal(name);
    if (s == nullptr) throw CatalogError("unknown signal " + std::string(name));
    return *s;
}

SignalRef SignalCatalog::locate(std::string_view name) const {
    const auto it = signal_index_.find(std::string(name));
    if (it == signal_index_.end()) throw CatalogError("unknown signal " + std::string(name));
    return it->second;
}

SignalCatalog parse_dbc(std::string_view text) {
    static const std::regex message_re(R"(^BO_\s+(\d+)\s+(\w+)\s*:\s*(\d+)\s*(\w*)\s*$)");
    static const std::regex signal_re(
        R"re(^SG_\s+(\w+)(?:\s+(M|m\d+))?\s*:\s*(\d+)\|(\d+)@([01])([+-])\s*\(([^,()]+),([^,()]+)\)\s*)re"
        R"re(\[([^|\]]+)\|([^|\]]+)\]\s*"([^"]*)"\s*(.*)$)re");

    // Messages are collected first so a message is validated once all its signals are known.
    std::vector<MessageDef> pending;
    std::vector<std::size_t> pending_lines;
    std::size_t skipped = 0;

    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        const std::string line(trim(text.substr(pos, end - pos)));
        pos = end + 1;
        ++line_no;
        if (line.empty()) {
            if (end == text.size()) break;
            continue;
        }

        const std::string head = first_token(line);
        std::smatch m;
        if (head == "BO_") {
            if (!std::regex_match(line, m, message_re)) {
                throw ParseError(line_no, "malformed BO_ statement");
            }
            MessageDef msg;
            const long long id = parse_integer(m[1].str(), line_no, "message id");
            if (id < 0 || id > 0xFFFFFFFFLL) throw ParseError(line_no, "message id out of range");
            msg.message_id = static_cast<std::uint32_t>(id);
            msg.name = m[2].str();
            msg.dlc = static_cast<int>(parse_integer(m[3].str(), line_no, "dlc"));
            if (msg.dlc > 8) throw ParseError(line_no, "dlc above 8 (CAN-FD is not supported)");
            msg.transmitter = m[4].str();
            pending.push_back(std::move(msg));
            pending_lines.push_back(line_no);
        } else if (head == "SG_") {
            if (pending.empty()) throw ParseError(line_no, "SG_ statement before any BO_");
            if (!std::regex_match(line, m, signal_re)) {
                throw ParseError(line_no, "malformed SG_ statement");
            }
            if (!m[2].str().empty()) {
                // Multiplexed signal (M / mN marker): outside the supported subset.
                ++skipped;
            } else {
                SignalDef s;
                s.name = m[1].str();
                s.start_bit = static_cast<int>(parse_integer(m[3].str(), line_no, "start bit"));
                s.bit_length = static_cast<int>(parse_integer(m[4].str(), line_no, "bit length"));
                s.byte_order = m[5].str() == "1" ? ByteOrder::little_endian : ByteOrder::big_endian;
                s.is_signed = m[6].str() == "-";
                s.scale = parse_real(m[7].str(), line_no, "scale");
                s.offset = parse_real(m[8].str(), line_no, "offset");
                s.min_phys = parse_real(m[9].str(), line_no, "minimum");
                s.max_phys = parse_real(m[10].str(), line_no, "maximum");
                s.unit = m[11].str();
                try {
                    validate_signal(s);
                } catch (const CatalogError& e) {
                    throw ParseError(line_no, e.what());
                }
                pending.back().signals.push_back(std::move(s));
            }
        } else {
            ++skipped;
        }
        if (end == text.size()) break;
    }

    SignalCatalog catalog;
    for (auto& msg : pending) catalog.add_message(std::move(msg));
    catalog.skipped_lines = skipped;
    return catalog;
}

SignalCatalog load_dbc(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open DBC file " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_dbc(buf.str());
}

std::uint32_t cid_to_mid(std::string_view cid_hex) {
    auto s = trim(cid_hex);
    if (s.size() >= 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) s.remove_prefix(2);
    if (s.empty()) throw ConversionError("empty CAN id");
    std::uint64_t value = 0;
    for (char c : s) {
        int digit;
        if (c >= '0' && c <= '9') {
            digit = c - '0';
        } else if (c >= 'a' && c <= 'f') {
            digit = c - 'a' + 10;
        } else if (c >= 'A' && c <= 'F') {
            digit = c - 'A' + 10;
        } else {
            throw ConversionError("non-hex character in CAN id '" + std::string(cid_hex) + "'");
        }
        value = value * 16 + static_cast<std::uint64_t>(digit);
        if (value > 0xFFFFFFFFULL) throw ConversionError("CAN id too large: " + std::string(cid_hex));
    }
    return static_cast<std::uint32_t>(value);
}

std::int64_t extract_raw(const Payload& payload, const SignalDef& signal) {
    const int shift = lsb_shift(signal);
    if (shift < 0) throw CatalogError("signal " + signal.name + " extends past the 64-bit payload");
    const std::uint64_t word =
        signal.byte_order == ByteOrder::little_endian ? payload_le(payload) : payload_be(payload);
    std::uint64_t raw = (word >> shift) & low_mask(signal.bit_length);
    if (signal.is_signed && signal.bit_length < 64) {
        const std::uint64_t sign = std::uint64_t{1} << (signal.bit_length - 1);
        raw = (raw ^ sign) - sign;
    }
    return static_cast<std::int64_t>(raw);
}

void insert_raw(Payload& payload, const SignalDef& signal, std::int64_t raw) {
    const int shift = lsb_shift(signal);
    if (shift < 0) throw CatalogError("signal " + signal.name + " extends past the 64-bit payload");
    const std::uint64_t mask = low_mask(signal.bit_length) << shift;
    const std::uint64_t bits = (static_cast<std::uint64_t>(raw) << shift) & mask;
    if (signal.byte_order == ByteOrder::little_endian) {
        store_le(payload, (payload_le(payload) & ~mask) | bits);
    } else {
        store_be(payload, (payload_be(payload) & ~mask) | bits);
    }
}

std::map<std::string, double> decode_frame(const CanFrame& frame, const SignalCatalog& catalog) {
    const auto* msg = catalog.find_message(frame.can_id);
    if (msg == nullptr) {
        throw UnknownMessageError("unknown message id " + std::to_string(frame.can_id));
    }
    if (frame.dlc < msg->dlc) {
        throw ContractError("frame for " + msg->name + " carries " + std::to_string(frame.dlc) +
                            " bytes, message needs " + std::to_string(msg->dlc));
    }
    std::map<std::string, double> out;
    for (const auto& s : msg->signals) out.emplace(s.name, s.to_physical(extract_raw(frame.payload, s)));
    return out;
}

Payload encode_signals(const std::map<std::string, double>& values, const MessageDef& message) {
    Payload payload{};
    for (const auto& s : message.signals) {
        const auto it = values.find(s.name);
        if (it == values.end()) throw EncodeError("no value for signal " + s.name);
        const double counts = std::round((it->second - s.offset) / s.scale);
        if (!std::isfinite(counts) || counts < static_cast<double>(s.raw_min()) ||
            counts > static_cast<double>(s.raw_max())) {
            throw EncodeError("value " + std::to_string(it->second) + " of signal " + s.name +
                              " does not fit in " + std::to_string(s.bit_length) + " bits");
        }
        insert_raw(payload, s, static_cast<std::int64_t>(counts));
    }
    return payload;
}

double quantize(const SignalDef& signal, double value) {
    double counts = std::round((value - signal.offset) / signal.scale);
    counts = std::clamp(counts, static_cast<double>(signal.raw_min()), static_cast<double>(signal.raw_max()));
    auto raw = static_cast<std::int64_t>(counts);
    const std::int64_t inward_from_top = signal.scale > 0 ? -1 : 1;
    for (int guard = 0; guard < 4 && signal.to_physical(raw) > signal.max_phys; ++guard) raw += inward_from_top;
    for (int guard = 0; guard < 4 && signal.to_physical(raw) < signal.min_phys; ++guard) raw -= inward_from_top;
    raw = std::clamp(raw, signal.raw_min(), signal.raw_max());
    return signal.to_physical(raw);
}

DecodeResult decode_frames(const std::vector<CanFrame>& frames, const SignalCatalog& catalog) {
    DecodeResult result;
    for (const auto& f : frames) {
        if (catalog.find_message(f.can_id) == nullptr) {
            ++result.skipped_frames;
            continue;
        }
        for (auto& [name, value] : decode_frame(f, catalog)) {
            result.samples.push_back(DecodedSample{f.timestamp, name, value});
        }
        ++result.decoded_frames;
    }
    return result;
}

std::vector<CanFrame> read_raw_trace(std::istream& in) {
    std::vector<CanFrame> frames;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto body = trim(line);
        if (body.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss{std::string(body)};
        std::string cell;
        while (std::getline(ss, cell, ',')) cols.emplace_back(trim(cell));
        if (line_no == 1 && !cols.empty() && cols[0] == "timestamp") continue;
        if (cols.size() != 10) {
            throw ParseError(line_no, "expected 10 columns (timestamp,can_id_hex,b0..b7), got " +
                                          std::to_string(cols.size()));
        }
        CanFrame f;
        f.timestamp = parse_real(cols[0], line_no, "timestamp");
        try {
            f.can_id = cid_to_mid(cols[1]);
            for (int i = 0; i < 8; ++i) {
                const auto byte = cid_to_mid(cols[2 + static_cast<std::size_t>(i)]);
                if (byte > 0xFF) throw ConversionError("byte value above 0xFF");
                f.payload[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(byte);
            }
        } catch (const ConversionError& e) {
            throw ParseError(line_no, e.what());
        }
        frames.push_back(f);
    }
    return frames;
}

std::vector<CanFrame> read_raw_trace(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open trace file " + path);
    return read_raw_trace(in);
}

void write_raw_trace(std::ostream& out, const std::vector<CanFrame>& frames) {
    out << "timestamp,can_id_hex,b0,b1,b2,b3,b4,b5,b6,b7\n";
    const auto flags = out.flags();
    for (const auto& f : frames) {
        out << std::setprecision(17) << std::defaultfloat << f.timestamp << ",0x" << std::hex
            << std::uppercase << f.can_id;
        for (auto b : f.payload) out << ',' << std::setw(2) << std::setfill('0') << static_cast<int>(b);
        out << std::dec << std::nouppercase << std::setfill(' ') << '\n';
    }
    out.flags(flags);
}

std::string_view default_dbc_text() {
    static constexpr std::string_view text = R"(VERSION ""

NS_ :
    CM_
    BA_DEF_

BS_:

BU_: EMS ESC ABS MDPS EPB

BO_ 608 EMS11: 8 EMS
 SG_ TQI_ACOR : 0|8@1+ (0.390625,0) [0|99.6] "%" ESC
 SG_ N : 8|16@1+ (0.25,0) [0|8000] "rpm" ESC
 SG_ TQI : 24|8@1+ (0.390625,0) [0|99.6] "%" ESC
 SG_ VS : 32|8@1+ (1,0) [0|254] "km/h" ESC
 SG_ PV_AV_CAN : 40|8@1+ (0.390625,0) [0|99.6] "%" ESC
 SG_ TPS : 48|8@1+ (0.469484,-15.0234) [-15.0234|104.6] "%" ESC

BO_ 544 ESP12: 8 ESC
 SG_ LAT_ACCEL : 0|11@1+ (0.01,-10.23) [-10.23|10.24] "m/s^2" EMS
 SG_ LONG_ACCEL : 13|11@1+ (0.01,-10.23) [-10.23|10.24] "m/s^2" EMS
 SG_ CYL_PRES : 24|12@1+ (0.1,0) [0|409.5] "Bar" EMS
 SG_ YAW_RATE : 40|13@1+ (0.01,-40.95) [-40.95|40.96] "deg/s" EMS

BO_ 902 WHL_SPD11: 8 ABS
 SG_ WHL_SPD_FL : 0|14@1+ (0.03125,0) [0|511.96875] "km/h" ESC
 SG_ WHL_SPD_FR : 16|14@1+ (0.03125,0) [0|511.96875] "km/h" ESC
 SG_ WHL_SPD_RL : 32|14@1+ (0.03125,0) [0|511.96875] "km/h" ESC
 SG_ WHL_SPD_RR : 48|14@1+ (0.03125,0) [0|511.96875] "km/h" ESC

BO_ 688 SAS11: 5 MDPS
 SG_ SAS_Angle : 0|16@1- (0.1,0) [-3276.8|3276.7] "Deg" ESC
 SG_ SAS_Speed : 16|8@1+ (4,0) [0|1016] "deg/s" ESC

BO_ 897 MDPS11: 8 MDPS
 SG_ CR_Mdps_StrColTq : 0|11@1+ (0.0078125,-8) [-8|7.9921875] "Nm" ESC
 SG_ CR_Mdps_OutTq : 16|12@1+ (0.1,-204.8) [-204.8|204.7] "" ESC

BO_ 1322 EPB11: 8 EPB
 SG_ EPB_FRC : 7|8@0+ (0.5,0) [0|127.5] "kN" ESC
 SG_ EPB_DBF_DECEL : 15|16@0+ (0.01,-327.68) [-327.68|327.67] "m/s^2" ESC

CM_ SG_ 608 TQI_ACOR "Actual engine torque";
BA_DEF_ SG_ "GenSigStartValue" INT 0 65535;
)";
    return text;
}

const SignalCatalog& default_catalog() {
    static const SignalCatalog catalog = parse_dbc(default_dbc_text());
    return catalog;
}

}  // namespace canadv
