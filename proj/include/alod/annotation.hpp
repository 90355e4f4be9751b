#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace alod {

/// One labeled object. Corners are 1-based inclusive VOC pixel coordinates.
struct GroundTruthBox {
    std::string class_name;
    int xmin = 0;
    int ymin = 0;
    int xmax = 0;
    int ymax = 0;
    bool difficult = false;

    friend bool operator==(const GroundTruthBox&, const GroundTruthBox&) = default;
};

struct ImageAnnotation {
    std::string image_id;
    int width = 0;
    int height = 0;
    std::vector<GroundTruthBox> boxes;

    friend bool operator==(const ImageAnnotation&, const ImageAnnotation&) = default;
};

struct DatasetIndex {
    std::map<std::string, ImageAnnotation> images;
    std::vector<std::string> class_list;

    std::size_t size() const { return images.size(); }
    bool has_class(std::string_view name) const;
    std::vector<std::string> image_ids() const;
    /// Adds an image, registering unseen classes in order of appearance.
    void add(ImageAnnotation annotation);
};

enum class ClassPolicy { strict, register_new };

/// Throws InvariantError unless the box is well-formed and fits the image bounds.
void validate_box(const GroundTruthBox& box, int width, int height);

/// Parses one VOC annotation document. Under `register_new` unseen class names
/// are appended to `class_list`; under `strict` they raise UnknownClassError and
/// `class_list` is never touched.
ImageAnnotation parse_voc_annotation(std::string_view xml_text, ClassPolicy policy,
                                     std::vector<std::string>& class_list);

std::string to_voc_xml(const ImageAnnotation& annotation);

/// Loads every *.xml file in `dir` (sorted by filename). The image id is the file stem.
DatasetIndex load_voc_directory(const std::filesystem::path& dir);

void write_voc_directory(const DatasetIndex& dataset, const std::filesystem::path& dir);

struct ClassSplit {
    DatasetIndex part_a;
    DatasetIndex part_b;
    std::vector<std::string> dropped;
};

/// Part B holds images whose boxes are all in `new_classes`, part A images with
/// none of them; images mixing both are dropped. Boxless images land in part A.
ClassSplit split_by_classes(const DatasetIndex& dataset, const std::set<std::string>& new_classes);

}  // namespace alod
