#pragma once

#include <string>
#include <vector>

#include "spikefuse/events.hpp"

namespace spikefuse {

/// On-disk sequence layout under one directory:
///   meta.txt         key = value (width, height, frames, n_slices)
///   events.csv       x,y,t,p with a header line
///   exposures.txt    one timestamp per line (frames + 1 entries)
///   groundtruth.txt  one "cx cy w h" line per frame
///   frames/f_NNNN.pgm
void save_sequence(const std::string& dir, const SynthSequence& sequence, int n_slices);

SynthSequence load_sequence(const std::string& dir);

/// Immediate subdirectories holding a meta.txt, sorted by name.
std::vector<std::string> list_sequence_dirs(const std::string& root);

}  // namespace spikefuse
