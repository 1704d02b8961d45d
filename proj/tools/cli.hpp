#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace c4synth::cli {

// Runs one verb. Returns 0 on success, 1 on runtime failure, 2 on invalid
// input (bad config, bad arguments, firewall violations).
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Config keys a verb honors, one per line, derived from the schema.
std::string verb_keys_help(const std::string& verb);

}  // namespace c4synth::cli
